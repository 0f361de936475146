use thiserror::Error;

/// Label value for unannotated pixels.
pub const VOID: u8 = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("label map {width}x{height} needs {} values, got {got}", width * height)]
    Size {
        width: usize,
        height: usize,
        got: usize,
    },
    #[error("label {value} at ({x},{y}) is not below {num_classes} and not VOID")]
    OutOfRange {
        x: usize,
        y: usize,
        value: u8,
        num_classes: usize,
    },
    #[error("region {width}x{height}+{left}+{top} outside {map_width}x{map_height} map")]
    Region {
        left: usize,
        top: usize,
        width: usize,
        height: usize,
        map_width: usize,
        map_height: usize,
    },
}

/// Per-pixel class indices, row-major, with [`VOID`] for unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, LabelError> {
        if data.len() != width * height {
            return Err(LabelError::Size {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Check every non-VOID label is below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<(), LabelError> {
        match self
            .data
            .iter()
            .position(|&v| v != VOID && v as usize >= num_classes)
        {
            Some(i) => Err(LabelError::OutOfRange {
                x: i % self.width,
                y: i / self.width,
                value: self.data[i],
                num_classes,
            }),
            None => Ok(()),
        }
    }

    pub fn count_non_void(&self) -> usize {
        self.data.iter().filter(|&&v| v != VOID).count()
    }

    /// Copy out the `width×height` rectangle whose top-left corner is `(left, top)`.
    pub fn crop(
        &self,
        left: usize,
        top: usize,
        width: usize,
        height: usize,
    ) -> Result<LabelMap, LabelError> {
        if left + width > self.width || top + height > self.height {
            return Err(LabelError::Region {
                left,
                top,
                width,
                height,
                map_width: self.width,
                map_height: self.height,
            });
        }
        let mut data = Vec::with_capacity(width * height);
        for y in top..top + height {
            data.extend_from_slice(&self.data[y * self.width + left..y * self.width + left + width]);
        }
        Ok(LabelMap {
            width,
            height,
            data,
        })
    }
}
