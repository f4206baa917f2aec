//! Convolution weight surgery for extra input channels.
//!
//! Pretrained first-layer weights have shape `(k1, k2, m, o)`: kernel height,
//! kernel width, input channels, output channels. Two adaptations grow the
//! input-channel axis:
//!
//! * [`adapt_weights_zero`] copies the original slices and zeroes the new ones,
//!   so extra channels contribute nothing to the feature maps.
//! * [`adapt_weights_proportional`] fills slice `j` with `m1/m2` times slice
//!   `j mod m1`, spreading the response evenly over all channels.
//!
//! The bias depends only on `o` and is carried over unchanged.
//! [`conv2d_reference`] is a plain valid-padding cross-correlation used to
//! check both adaptations.

use std::io::{Read, Write};

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 4-D weight tensor stored in `(k1, k2, m, o)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    k1: usize,
    k2: usize,
    m: usize,
    o: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn new(k1: usize, k2: usize, m: usize, o: usize, data: Vec<T>) -> Result<Self, TensorError> {
        let len = checked_len(&[k1, k2, m, o])?;
        if data.len() != len {
            return Err(TensorError::Dimension(format!(
                "data length {} does not match {k1}x{k2}x{m}x{o}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::Dimension("non-finite weight".into()));
        }
        Ok(Tensor4 { k1, k2, m, o, data })
    }

    pub fn zeros(k1: usize, k2: usize, m: usize, o: usize) -> Result<Self, TensorError> {
        let len = checked_len(&[k1, k2, m, o])?;
        Ok(Tensor4 {
            k1,
            k2,
            m,
            o,
            data: vec![T::zero(); len],
        })
    }

    /// Builds a tensor by evaluating `f(u, v, c, o)` at every index.
    pub fn from_fn(
        k1: usize,
        k2: usize,
        m: usize,
        o: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self, TensorError> {
        let mut t = Self::zeros(k1, k2, m, o)?;
        for u in 0..k1 {
            for v in 0..k2 {
                for c in 0..m {
                    for oc in 0..o {
                        let i = t.index(u, v, c, oc);
                        t.data[i] = f(u, v, c, oc);
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.k1, self.k2, self.m, self.o)
    }

    pub fn in_channels(&self) -> usize {
        self.m
    }

    pub fn out_channels(&self) -> usize {
        self.o
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, c: usize, oc: usize) -> usize {
        ((u * self.k2 + v) * self.m + c) * self.o + oc
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize, oc: usize) -> T {
        self.data[self.index(u, v, c, oc)]
    }

    /// Copies out the `(k1, k2, o)` slice for input channel `c`.
    pub fn channel_slice(&self, c: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(self.k1 * self.k2 * self.o);
        for u in 0..self.k1 {
            for v in 0..self.k2 {
                let start = self.index(u, v, c, 0);
                out.extend_from_slice(&self.data[start..start + self.o]);
            }
        }
        out
    }

    /// Maps every new input channel `j` to `scale * self[.., .., src(j), ..]`,
    /// or to zero when `src(j)` is `None`.
    fn remap_channels(&self, m2: usize, scale: T, src: impl Fn(usize) -> Option<usize>) -> Self {
        let mut data = Vec::with_capacity(self.k1 * self.k2 * m2 * self.o);
        for u in 0..self.k1 {
            for v in 0..self.k2 {
                for j in 0..m2 {
                    match src(j) {
                        Some(c) => {
                            let start = self.index(u, v, c, 0);
                            data.extend(self.data[start..start + self.o].iter().map(|&w| scale * w));
                        }
                        None => data.extend(std::iter::repeat_n(T::zero(), self.o)),
                    }
                }
            }
        }
        Tensor4 {
            k1: self.k1,
            k2: self.k2,
            m: m2,
            o: self.o,
            data,
        }
    }
}

fn checked_len(dims: &[usize]) -> Result<usize, TensorError> {
    dims.iter().try_fold(1usize, |acc, &d| {
        if d == 0 {
            return Err(TensorError::Dimension("zero-sized dimension".into()));
        }
        acc.checked_mul(d)
            .ok_or_else(|| TensorError::Dimension(format!("dimensions {dims:?} overflow")))
    })
}

/// Bias vector of a convolution layer, one value per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Bias<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> Bias<T> {
    pub fn new(values: Vec<T>) -> Self {
        Bias { values }
    }

    pub fn check_for(&self, w: &Tensor4<T>) -> Result<(), TensorError> {
        if self.values.len() != w.o {
            return Err(TensorError::Dimension(format!(
                "bias length {} does not match {} output channels",
                self.values.len(),
                w.o
            )));
        }
        Ok(())
    }
}

/// Zero variant: the first `m1` channel slices are copied, the rest are zero.
///
/// `m2` smaller than the source channel count is rejected.
pub fn adapt_weights_zero<T: Scalar>(w1: &Tensor4<T>, m2: usize) -> Result<Tensor4<T>, TensorError> {
    if m2 < w1.m {
        return Err(TensorError::Dimension(format!(
            "zero adaptation needs m2 >= {} input channels, got {m2}",
            w1.m
        )));
    }
    let m1 = w1.m;
    Ok(w1.remap_channels(m2, T::one(), |j| (j < m1).then_some(j)))
}

/// Proportional variant: slice `j` is `(m1 / m2) * w1[.., .., j % m1, ..]`.
///
/// Any `m2 >= 1` is accepted, including shrinking the channel axis.
pub fn adapt_weights_proportional<T: Scalar>(
    w1: &Tensor4<T>,
    m2: usize,
) -> Result<Tensor4<T>, TensorError> {
    if m2 == 0 {
        return Err(TensorError::Dimension("m2 must be at least 1".into()));
    }
    let m1 = w1.m;
    Ok(w1.remap_channels(m2, proportional_scale::<T>(m1, m2), |j| Some(j % m1)))
}

/// Scale factor `m1 / m2` applied by the proportional variant.
pub fn proportional_scale<T: Scalar>(m1: usize, m2: usize) -> T {
    T::from_usize_exact(m1) / T::from_usize_exact(m2)
}

/// Dense `h × w × c` image or feature map in NHWC order (single batch item).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != checked_len(&[height, width, channels])? {
            return Err(TensorError::Dimension(format!(
                "feature map data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self, TensorError> {
        let mut data = Vec::with_capacity(checked_len(&[height, width, channels])?);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Mean and population variance over all values.
    pub fn mean_variance(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
        let var = self
            .data
            .iter()
            .map(|v| (v.to_f64_lossy() - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    }
}

/// Valid-padding, stride-1 cross-correlation:
/// `out[y, x, o] = bias[o] + Σ_{u,v,c} img[y+u, x+v, c] · w[u, v, c, o]`.
pub fn conv2d_reference<T: Scalar>(
    img: &FeatureMap<T>,
    w: &Tensor4<T>,
    bias: Option<&Bias<T>>,
) -> Result<FeatureMap<T>, TensorError> {
    if img.channels != w.m {
        return Err(TensorError::Dimension(format!(
            "image has {} channels, weights expect {}",
            img.channels, w.m
        )));
    }
    if img.height < w.k1 || img.width < w.k2 {
        return Err(TensorError::Dimension(format!(
            "image {}x{} smaller than kernel {}x{}",
            img.height, img.width, w.k1, w.k2
        )));
    }
    if let Some(b) = bias {
        b.check_for(w)?;
    }
    let (oh, ow) = (img.height - w.k1 + 1, img.width - w.k2 + 1);
    let mut out = vec![T::zero(); oh * ow * w.o];
    for y in 0..oh {
        for x in 0..ow {
            let acc = &mut out[(y * ow + x) * w.o..(y * ow + x + 1) * w.o];
            if let Some(b) = bias {
                acc.copy_from_slice(&b.values);
            }
            for u in 0..w.k1 {
                for v in 0..w.k2 {
                    for c in 0..w.m {
                        let px = img.get(y + u, x + v, c);
                        let base = w.index(u, v, c, 0);
                        for (a, &wt) in acc.iter_mut().zip(&w.data[base..base + w.o]) {
                            *a += px * wt;
                        }
                    }
                }
            }
        }
    }
    FeatureMap::new(oh, ow, w.o, out)
}

const MAGIC: &[u8; 4] = b"RTNS";
const VERSION: u32 = 1;
/// Magic, version and four u32 dimensions.
pub const HEADER_LEN: usize = 24;

/// Writes `t` (and optionally its bias) in the little-endian `RTNS` format.
pub fn write_tensor<T: Scalar, W: Write>(
    t: &Tensor4<T>,
    bias: Option<&Bias<T>>,
    mut sink: W,
) -> Result<(), TensorError> {
    let dim = |d: usize| {
        u32::try_from(d).map_err(|_| TensorError::Format(format!("dimension {d} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + t.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [t.k1, t.k2, t.m, t.o] {
        buf.extend_from_slice(&dim(d)?.to_le_bytes());
    }
    for v in &t.data {
        buf.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
    }
    if let Some(b) = bias {
        b.check_for(t)?;
        buf.extend_from_slice(&dim(b.values.len())?.to_le_bytes());
        for v in &b.values {
            buf.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], TensorError> {
    if bytes.len() < n {
        return Err(TensorError::Format(format!("truncated stream while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn take_u32(bytes: &mut &[u8], what: &str) -> Result<u32, TensorError> {
    let b = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn take_f32s<T: Scalar>(bytes: &mut &[u8], n: usize, what: &str) -> Result<Vec<T>, TensorError> {
    let len = n
        .checked_mul(4)
        .ok_or_else(|| TensorError::Format(format!("{what} size overflows")))?;
    let raw = take(bytes, len, what)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap_or(T::nan()))
        .collect())
}

/// Reads a tensor and optional bias written by [`write_tensor`].
pub fn read_tensor<T: Scalar, R: Read>(
    mut source: R,
) -> Result<(Tensor4<T>, Option<Bias<T>>), TensorError> {
    let mut all = Vec::new();
    source.read_to_end(&mut all)?;
    let mut bytes = all.as_slice();
    if take(&mut bytes, 4, "magic")? != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = take_u32(&mut bytes, "version")?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = take_u32(&mut bytes, "dimensions")? as usize;
    }
    let len = checked_len(&dims).map_err(|e| TensorError::Format(e.to_string()))?;
    let data = take_f32s(&mut bytes, len, "weights")?;
    let tensor = Tensor4::new(dims[0], dims[1], dims[2], dims[3], data)
        .map_err(|e| TensorError::Format(e.to_string()))?;
    if bytes.is_empty() {
        return Ok((tensor, None));
    }
    let count = take_u32(&mut bytes, "bias count")? as usize;
    if count != tensor.o {
        return Err(TensorError::Format(format!(
            "bias count {count} does not match {} output channels",
            tensor.o
        )));
    }
    let values = take_f32s(&mut bytes, count, "bias")?;
    if !bytes.is_empty() {
        return Err(TensorError::Format(format!("{} trailing bytes", bytes.len())));
    }
    Ok((tensor, Some(Bias::new(values))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Tensor4<f64> {
        Tensor4::new(1, 1, 3, 1, vec![0.3, -1.7, 2.5]).unwrap()
    }

    #[test]
    fn zero_variant_pads_with_zeros() {
        let w2 = adapt_weights_zero(&abc(), 4).unwrap();
        assert_eq!(w2.shape(), (1, 1, 4, 1));
        assert_eq!(w2.data(), &[0.3, -1.7, 2.5, 0.0]);
        assert_eq!(adapt_weights_zero(&abc(), 3).unwrap(), abc());
        assert!(matches!(adapt_weights_zero(&abc(), 2), Err(TensorError::Dimension(_))));
    }

    #[test]
    fn proportional_variant_small_case() {
        let (a, b, c) = (0.3, -1.7, 2.5);
        let w2 = adapt_weights_proportional(&abc(), 4).unwrap();
        let s = 3.0 / 4.0;
        assert_eq!(w2.data(), &[s * a, s * b, s * c, s * a]);
        assert_eq!(adapt_weights_proportional(&abc(), 3).unwrap(), abc());
        // shrinking is allowed for this variant
        let w1 = adapt_weights_proportional(&abc(), 2).unwrap();
        assert_eq!(w1.data(), &[1.5 * a, 1.5 * b]);
        assert!(adapt_weights_proportional(&abc(), 0).is_err());
    }

    #[test]
    fn conv_sum_of_channels() {
        let w = Tensor4::<f64>::new(1, 1, 3, 1, vec![1.0; 3]).unwrap();
        let img = FeatureMap::from_fn(4, 5, 3, |_, _, _| 2.0).unwrap();
        let out = conv2d_reference(&img, &w, None).unwrap();
        assert_eq!((out.height, out.width, out.channels), (4, 5, 1));
        assert!(out.data.iter().all(|&v| v == 6.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let w = Tensor4::<f32>::new(1, 1, 1, 1, vec![1.0]).unwrap();
        let img = FeatureMap::from_fn(3, 3, 1, |y, x, _| (y * 3 + x) as f32).unwrap();
        assert_eq!(conv2d_reference(&img, &w, None).unwrap(), img);
    }

    #[test]
    fn conv_adds_bias_and_checks_shapes() {
        let w = Tensor4::<f64>::new(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let img = FeatureMap::from_fn(2, 2, 1, |_, _, _| 1.0).unwrap();
        let out = conv2d_reference(&img, &w, Some(&Bias::new(vec![10.0, 20.0]))).unwrap();
        assert_eq!(out.get(1, 1, 0), 11.0);
        assert_eq!(out.get(1, 1, 1), 22.0);
        let wrong = FeatureMap::from_fn(2, 2, 3, |_, _, _| 1.0).unwrap();
        assert!(matches!(conv2d_reference(&wrong, &w, None), Err(TensorError::Dimension(_))));
        assert!(conv2d_reference(&img, &w, Some(&Bias::new(vec![1.0]))).is_err());
        let big = Tensor4::<f64>::zeros(3, 3, 1, 1).unwrap();
        assert!(conv2d_reference(&img, &big, None).is_err());
    }

    #[test]
    fn tiny_file_layout() {
        let t = Tensor4::<f32>::new(1, 1, 1, 1, vec![0.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, None, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 4);
        assert_eq!(&buf[..4], b"RTNS");
        assert_eq!(&buf[HEADER_LEN..], &0.5f32.to_le_bytes());
        let (back, bias) = read_tensor::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(bias.is_none());
    }

    #[test]
    fn bias_round_trips() {
        let t = Tensor4::<f32>::new(1, 1, 1, 2, vec![0.5, -0.25]).unwrap();
        let b = Bias::new(vec![1.5f32, -3.0]);
        let mut buf = Vec::new();
        write_tensor(&t, Some(&b), &mut buf).unwrap();
        let (back, bias) = read_tensor::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(bias, Some(b));
    }

    #[test]
    fn format_errors() {
        let t = Tensor4::<f32>::new(1, 1, 1, 1, vec![0.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&t, None, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor::<f32, _>(bad.as_slice()), Err(TensorError::Format(m)) if m.contains("magic")));

        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_tensor::<f32, _>(short), Err(TensorError::Format(m)) if m.contains("truncated")));

        let mut huge = buf[..8].to_vec();
        for _ in 0..4 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(read_tensor::<f32, _>(huge.as_slice()), Err(TensorError::Format(_))));
    }
}
