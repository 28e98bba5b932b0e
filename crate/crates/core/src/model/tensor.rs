use crate::error::{Error, Result};

/// Dense row-major tensor of signed 8-bit values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor8 {
    pub dims: Vec<usize>,
    pub data: Vec<i8>,
}

impl Tensor8 {
    pub fn new(dims: Vec<usize>, data: Vec<i8>) -> Result<Tensor8> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "tensor dims {dims:?} must be positive"
            )));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "tensor dims {dims:?} hold {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor8 { dims, data })
    }

    pub fn filled(dims: Vec<usize>, value: i8) -> Tensor8 {
        let len = dims.iter().product();
        Tensor8 {
            dims,
            data: vec![value; len],
        }
    }

    pub fn random(dims: Vec<usize>, rng: &mut SplitMix64) -> Tensor8 {
        let len: usize = dims.iter().product();
        let data = (0..len).map(|_| rng.next_i8()).collect();
        Tensor8 { dims, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element of an `[h, w, c]` feature map.
    #[inline]
    pub fn at3(&self, y: usize, x: usize, c: usize) -> i8 {
        self.data[(y * self.dims[1] + x) * self.dims[2] + c]
    }
}

/// SplitMix64 generator; small, fast, and reproducible across platforms.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent stream for one layer's weights.
    pub fn for_layer(seed: u64, layer: usize) -> Self {
        SplitMix64::new(seed ^ (layer as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform over `[-128, 127]`.
    pub fn next_i8(&mut self) -> i8 {
        (self.next_u64() >> 56) as u8 as i8
    }

    /// Uniform over `[0, bound)`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }
}
