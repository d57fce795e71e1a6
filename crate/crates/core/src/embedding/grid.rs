use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const MAX_DIM: usize = 3;

/// Dense learnable lattice on `[-1, 1]^d`, vertex 0 at −1 and vertex `r−1` at +1
/// on every axis. Values are `[res…, channels]`, last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid<T> {
    resolution: Vec<usize>,
    channels: usize,
    values: Tensor<T>,
}

impl<T: Real> FeatureGrid<T> {
    pub fn new(resolution: Vec<usize>, channels: usize, data: Vec<T>) -> Result<Self> {
        validate_resolution(&resolution)?;
        if channels == 0 {
            return Err(Error::Config("feature grid needs at least one channel".into()));
        }
        let mut shape = resolution.clone();
        shape.push(channels);
        let values = Tensor::new(shape, data)?.with_grad();
        Ok(Self {
            resolution,
            channels,
            values,
        })
    }

    pub fn zeros(resolution: Vec<usize>, channels: usize) -> Result<Self> {
        let n = resolution.iter().product::<usize>() * channels;
        Self::new(resolution, channels, vec![T::zero(); n])
    }

    /// Values uniform in `[−range, range]`.
    pub fn random<R: Rng>(resolution: Vec<usize>, channels: usize, range: f64, rng: &mut R) -> Result<Self> {
        let n = resolution.iter().product::<usize>() * channels;
        let data = (0..n).map(|_| T::lit(rng.random_range(-range..=range))).collect();
        Self::new(resolution, channels, data)
    }

    pub fn from_fn(resolution: Vec<usize>, channels: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let nv: usize = resolution.iter().product();
        let mut data = Vec::with_capacity(nv * channels);
        for v in 0..nv {
            for c in 0..channels {
                data.push(f(v, c));
            }
        }
        Self::new(resolution, channels, data)
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_vertices(&self) -> usize {
        self.values.numel() / self.channels
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor<T> {
        &mut self.values
    }

    pub fn data(&self) -> &[T] {
        self.values.data()
    }

    pub fn vertex(&self, idx: usize) -> &[T] {
        &self.values.data()[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        flat_index(&self.resolution, multi)
    }

    /// Coordinate of a vertex in `[-1, 1]^d`.
    pub fn vertex_position(&self, idx: usize) -> Vec<T> {
        unflatten(&self.resolution, idx)
            .into_iter()
            .zip(&self.resolution)
            .map(|(i, &r)| lattice_coord(i, r))
            .collect()
    }

    /// Multilinear interpolation of the vertex features at `x` (clamped to the domain).
    pub fn query(&self, x: &[T]) -> Result<Vec<T>> {
        let corners = self.corners_at(x)?;
        let mut out = vec![T::zero(); self.channels];
        corners.accumulate(self.values.data(), self.channels, &mut out);
        Ok(out)
    }

    pub(crate) fn corners_at(&self, x: &[T]) -> Result<Corners<T>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "query of rank {} against a rank-{} grid",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Input(format!("NaN coordinate {x:?}")));
        }
        let mut spans = [AxisSpan::default(); MAX_DIM];
        for (a, (&xa, &r)) in x.iter().zip(&self.resolution).enumerate() {
            spans[a] = locate_axis(xa, r);
        }
        Ok(Corners::new(&self.resolution, &spans[..self.dim()]))
    }
}

pub(crate) fn validate_resolution(resolution: &[usize]) -> Result<()> {
    if resolution.is_empty() || resolution.len() > MAX_DIM {
        return Err(Error::Config(format!(
            "grid rank must be 1..={MAX_DIM}, got {}",
            resolution.len()
        )));
    }
    if let Some(r) = resolution.iter().find(|&&r| r < 2) {
        return Err(Error::Config(format!("grid extent {r} is below the minimum of 2")));
    }
    Ok(())
}

pub(crate) fn flat_index(res: &[usize], multi: &[usize]) -> usize {
    multi.iter().zip(res).fold(0, |acc, (&i, &r)| acc * r + i)
}

pub(crate) fn unflatten(res: &[usize], mut idx: usize) -> Vec<usize> {
    let mut out = vec![0; res.len()];
    for a in (0..res.len()).rev() {
        out[a] = idx % res[a];
        idx /= res[a];
    }
    out
}

/// Position of lattice index `i` on an `r`-vertex axis spanning `[-1, 1]`.
pub fn lattice_coord<T: Real>(i: usize, r: usize) -> T {
    if i + 1 == r {
        return T::one();
    }
    T::lit(-1.0 + 2.0 * i as f64 / (r - 1) as f64)
}

/// Lower cell vertex and fractional offset along one axis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct AxisSpan<T> {
    pub lo: usize,
    pub frac: T,
    /// `d frac / d x`; zero where the coordinate was clamped.
    pub slope: T,
}

pub(crate) fn locate_axis<T: Real>(x: T, r: usize) -> AxisSpan<T> {
    let x = x.as_f64();
    let inside = (-1.0..=1.0).contains(&x);
    let scale = (r - 1) as f64 / 2.0;
    let mut t = (x.clamp(-1.0, 1.0) + 1.0) * scale;
    // snap coordinates that are a rounding error of T away from a vertex
    let rt = t.round();
    if (t - rt).abs() <= T::epsilon().as_f64() * 4.0 * r as f64 {
        t = rt;
    }
    let lo = (t.floor() as usize).min(r - 2);
    AxisSpan {
        lo,
        frac: T::lit(t - lo as f64),
        slope: if inside { T::lit(scale) } else { T::zero() },
    }
}

/// Vertex `i` of a `dst`-vertex axis, located on a `src`-vertex axis over the same span.
/// Integer arithmetic keeps the cell choice exact.
pub(crate) fn lattice_axis<T: Real>(i: usize, src: usize, dst: usize) -> AxisSpan<T> {
    let num = i * (src - 1);
    let den = dst - 1;
    let lo = (num / den).min(src - 2);
    let rem = num - lo * den;
    AxisSpan {
        lo,
        frac: T::from_usize(rem).unwrap() / T::from_usize(den).unwrap(),
        slope: T::zero(),
    }
}

/// The `2^d` cell corners of a query with their multilinear weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Corners<T> {
    pub idx: [usize; 1 << MAX_DIM],
    pub w: [T; 1 << MAX_DIM],
    pub n: usize,
    spans: [AxisSpan<T>; MAX_DIM],
    dim: usize,
}

impl<T: Real> Corners<T> {
    pub fn new(res: &[usize], spans: &[AxisSpan<T>]) -> Self {
        let d = spans.len();
        let n = 1 << d;
        let mut idx = [0usize; 1 << MAX_DIM];
        let mut w = [T::zero(); 1 << MAX_DIM];
        for c in 0..n {
            let mut flat = 0;
            let mut weight = T::one();
            for a in 0..d {
                let bit = (c >> (d - 1 - a)) & 1;
                flat = flat * res[a] + spans[a].lo + bit;
                weight *= if bit == 1 { spans[a].frac } else { T::one() - spans[a].frac };
            }
            idx[c] = flat;
            w[c] = weight;
        }
        let mut s = [AxisSpan::default(); MAX_DIM];
        s[..d].copy_from_slice(spans);
        Self {
            idx,
            w,
            n,
            spans: s,
            dim: d,
        }
    }

    /// `out += Σ_c w_c · values[idx_c]`.
    #[inline]
    pub fn accumulate(&self, values: &[T], channels: usize, out: &mut [T]) {
        for c in 0..self.n {
            let w = self.w[c];
            let row = &values[self.idx[c] * channels..(self.idx[c] + 1) * channels];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
    }

    /// `grads[idx_c] += w_c · dy`.
    #[inline]
    pub fn scatter(&self, dy: &[T], channels: usize, grads: &mut [T]) {
        for c in 0..self.n {
            let w = self.w[c];
            let row = &mut grads[self.idx[c] * channels..(self.idx[c] + 1) * channels];
            for (g, &d) in row.iter_mut().zip(dy) {
                *g += w * d;
            }
        }
    }

    /// Gradient of `dy · query(x)` with respect to the coordinate.
    pub fn coord_grad(&self, values: &[T], channels: usize, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let mut out = vec![T::zero(); d];
        for c in 0..self.n {
            let row = &values[self.idx[c] * channels..(self.idx[c] + 1) * channels];
            let proj: T = row.iter().zip(dy).map(|(&v, &g)| v * g).sum();
            for (a, o) in out.iter_mut().enumerate() {
                let mut dw = T::one();
                for b in 0..d {
                    let bit = (c >> (d - 1 - b)) & 1;
                    let f = self.spans[b].frac;
                    dw *= if b == a {
                        if bit == 1 { T::one() } else { -T::one() }
                    } else if bit == 1 {
                        f
                    } else {
                        T::one() - f
                    };
                }
                *o += dw * proj * self.spans[a].slope;
            }
        }
        out
    }
}

/// Multilinear interpolation over raw row-major lattice values `[res…, channels]`.
/// `x` is clamped to the domain; caller guarantees matching lengths.
pub fn interp_lattice<T: Real>(resolution: &[usize], channels: usize, values: &[T], x: &[T], out: &mut [T]) {
    debug_assert_eq!(values.len(), resolution.iter().product::<usize>() * channels);
    let mut spans = [AxisSpan::default(); MAX_DIM];
    for (a, (&xa, &r)) in x.iter().zip(resolution).enumerate() {
        spans[a] = locate_axis(xa, r);
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    Corners::new(resolution, &spans[..resolution.len()]).accumulate(values, channels, out);
}

/// Interpolated feature at `x`. Same as [`FeatureGrid::query`].
pub fn interp_query<T: Real>(grid: &FeatureGrid<T>, x: &[T]) -> Result<Vec<T>> {
    grid.query(x)
}

/// Backward of [`interp_query`] for the upstream gradient `dy`: returns the
/// per-vertex gradient (same layout as the grid values) and `d/dx`.
pub fn interp_query_backward<T: Real>(grid: &FeatureGrid<T>, x: &[T], dy: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let corners = grid.corners_at(x)?;
    let mut dv = vec![T::zero(); grid.values.numel()];
    corners.scatter(dy, grid.channels, &mut dv);
    let dx = corners.coord_grad(grid.values.data(), grid.channels, dy);
    Ok((dv, dx))
}
