//! Per-second frame features, the toy vision encoder and late fusion.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::subtitle::TimeSpan;
use crate::tensor::{affine, affine_backward, relu, relu_backward, xavier, ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"VFTR";
const VERSION: u32 = 1;

/// One feature row per second of video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureTrack {
    features: Tensor,
}

impl FrameFeatureTrack {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::dim("frame features", features.shape(), &[0, 0]));
        }
        features.ensure_finite("frame features")?;
        Ok(Self { features })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn n_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Checks the one-row-per-started-second invariant against a duration.
    pub fn check_duration(&self, duration_s: f64) -> Result<()> {
        let want = duration_s.ceil() as usize;
        if self.n_frames() != want {
            return Err(Error::Integrity(format!(
                "feature track has {} frames, a {duration_s} s video needs {want}",
                self.n_frames()
            )));
        }
        Ok(())
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<feature track>", e);
        let dim =
            |v: usize| u32::try_from(v).map_err(|_| Error::Format("dimension exceeds u32".into()));
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&dim(self.n_frames())?.to_le_bytes())
            .map_err(io)?;
        w.write_all(&dim(self.feature_dim())?.to_le_bytes())
            .map_err(io)?;
        for &v in self.features.data() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("<feature track>", e))?;
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad feature track magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        if word(4) != VERSION {
            return Err(Error::Format(format!(
                "unsupported feature track version {}",
                word(4)
            )));
        }
        let (n, d) = (word(8) as usize, word(12) as usize);
        let body = &bytes[16..];
        if body.len() != n * d * 4 {
            return Err(Error::Format(format!(
                "feature track body has {} bytes, header promises {n}×{d} f32",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Self::new(Tensor::new(vec![n, d], data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(bytes.as_slice())
    }
}

/// Mean of the frame rows whose second index falls in
/// `[floor(start), ceil(end))`; an empty range yields the row at
/// `floor(start)`, clamped into the track.
pub fn align_frames(track: &FrameFeatureTrack, span: &TimeSpan) -> Vec<f64> {
    let n = track.n_frames();
    let lo = (span.start_s.floor() as usize).min(n);
    let hi = (span.end_s.ceil() as usize).min(n);
    let f = track.features();
    if lo >= hi {
        return f.row(lo.min(n - 1)).to_vec();
    }
    let mut out = vec![0.0; f.cols()];
    for r in lo..hi {
        for (o, v) in out.iter_mut().zip(f.row(r)) {
            *o += v;
        }
    }
    let k = (hi - lo) as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// Maps pooled frame features to a vision vector.
pub trait VisionEncoder {
    fn out_dim(&self) -> usize;
    fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()>;
    /// Encodes each row of `pooled` (`[m × feature_dim]`) to `[m × out_dim]`.
    fn encode(&self, params: &ParamSet, pooled: &Tensor) -> Result<Tensor>;
    /// Accumulates parameter gradients for `d encode(pooled)`.
    fn backward(&self, params: &mut ParamSet, pooled: &Tensor, grad: &Tensor) -> Result<()>;
}

/// Affine map of temporally mean-pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyVisionEncoder {
    pub prefix: String,
    pub feature_dim: usize,
    pub out_dim: usize,
}

impl ToyVisionEncoder {
    fn key(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }
}

impl VisionEncoder for ToyVisionEncoder {
    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn init<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        params.insert(self.key("w"), xavier(rng, self.feature_dim, self.out_dim))?;
        params.insert(self.key("b"), Tensor::zeros(&[self.out_dim]))
    }

    fn encode(&self, params: &ParamSet, pooled: &Tensor) -> Result<Tensor> {
        affine(
            pooled,
            params.value(&self.key("w"))?,
            params.value(&self.key("b"))?,
        )
    }

    fn backward(&self, params: &mut ParamSet, pooled: &Tensor, grad: &Tensor) -> Result<()> {
        let g = affine_backward(pooled, params.value(&self.key("w"))?, grad)?;
        params.accumulate(&self.key("w"), &g.w)?;
        params.accumulate(&self.key("b"), &g.b)
    }
}

/// Global vision vector of a whole track.
pub fn vision_encode<V: VisionEncoder>(
    enc: &V,
    params: &ParamSet,
    track: &FrameFeatureTrack,
) -> Result<Vec<f64>> {
    if track.n_frames() == 0 {
        return Err(Error::Input("feature track is empty".into()));
    }
    let pooled = Tensor::vector(
        track
            .features()
            .sum_rows()
            .scale(1.0 / track.n_frames() as f64)
            .into_data(),
    );
    Ok(enc.encode(params, &pooled.as_row_matrix())?.into_data())
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    input: Tensor,
    pre: Tensor,
    d_l: usize,
}

/// `relu([h ; v] · W + b)` projecting `d_l + d_v` back to `d_l`. `v` is a
/// single row broadcast to every position or one row per position.
pub fn fuse_vision(
    params: &ParamSet,
    prefix: &str,
    h: &Tensor,
    v: &Tensor,
) -> Result<(Tensor, FusionCache)> {
    let w = params.value(&format!("{prefix}.w"))?;
    let b = params.value(&format!("{prefix}.b"))?;
    let (n, d_l) = (h.rows(), h.cols());
    let d_v = v.cols();
    if w.shape() != [d_l + d_v, d_l] {
        return Err(Error::Config(format!(
            "fusion weights {:?} do not fit d_l={d_l}, d_v={d_v}",
            w.shape()
        )));
    }
    let v_rows = match v.rows() {
        1 => Tensor::stack_rows(&vec![v.row(0); n])?,
        r if r == n => v.clone(),
        r => return Err(Error::Config(format!("{r} vision rows for {n} positions"))),
    };
    let input = h.concat_cols(&v_rows)?;
    let pre = affine(&input, w, b)?;
    Ok((relu(&pre), FusionCache { input, pre, d_l }))
}

/// Returns `(d h, d v)` with `d v` shaped like the `v` given to
/// [`fuse_vision`].
pub fn fuse_vision_backward(
    params: &mut ParamSet,
    prefix: &str,
    cache: &FusionCache,
    grad: &Tensor,
    v_rows: usize,
) -> Result<(Tensor, Tensor)> {
    let d_pre = relu_backward(&cache.pre, grad);
    let wk = format!("{prefix}.w");
    let g = affine_backward(&cache.input, params.value(&wk)?, &d_pre)?;
    params.accumulate(&wk, &g.w)?;
    params.accumulate(&format!("{prefix}.b"), &g.b)?;
    let (dh, dv) = g.x.split_cols(cache.d_l)?;
    let dv = if v_rows == 1 {
        dv.sum_rows().as_row_matrix()
    } else {
        dv
    };
    Ok((dh, dv))
}
