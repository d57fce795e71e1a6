//! Analytic ensembles with closed-form ground truth at any `(x, c)`.
//!
//! `fourier`: `f(x, c) = Σ_j a_j(c) · sin(π k_j·x + φ_j(c))` with
//! `a_j(c) = α_j (1 + ½ sin(2π β_j·c + γ_j))` and `φ_j(c) = φ0_j + π δ_j·c`,
//! integer wave vectors `|k_j|_∞ ≤ max_frequency`.
//!
//! `blobs`: `f(x, c) = Σ_b w_b · exp(−|x − μ_b(c)|² / (2 s_b²))` with centers
//! advected linearly, `μ_b(c) = p_b + V_b (c − ½)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::EnsembleDataset;
use super::field::Field;
use super::norm::index_to_coord;
use crate::embedding::unflatten;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: String,
    pub seed: u64,
    pub resolution: Vec<usize>,
    pub params: usize,
    #[serde(default = "default_terms")]
    pub terms: usize,
    #[serde(default = "default_max_frequency")]
    pub max_frequency: usize,
    #[serde(default = "default_variable")]
    pub variable: String,
}

fn default_terms() -> usize {
    8
}

fn default_max_frequency() -> usize {
    2
}

fn default_variable() -> String {
    "value".into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierTerm {
    pub wave: Vec<f64>,
    pub amplitude: f64,
    pub amp_direction: Vec<f64>,
    pub amp_phase: f64,
    pub phase: f64,
    pub phase_direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub weight: f64,
    pub center: Vec<f64>,
    /// Row-major `[dim, params]`.
    pub drift: Vec<f64>,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Fourier(Vec<FourierTerm>),
    Blobs(Vec<Blob>),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl Generator {
    pub fn from_spec(spec: &GeneratorSpec) -> Result<Self> {
        let d = spec.resolution.len();
        if !(1..=3).contains(&d) || spec.resolution.iter().any(|&r| r < 2) {
            return Err(Error::Config(format!("generator resolution {:?} is not 1-3 extents >= 2", spec.resolution)));
        }
        if spec.terms == 0 {
            return Err(Error::Config("generator needs at least one term".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dc = spec.params;
        match spec.kind.as_str() {
            "fourier" => {
                if spec.max_frequency == 0 {
                    return Err(Error::Config("fourier generator needs max_frequency >= 1".into()));
                }
                let kmax = spec.max_frequency as i64;
                let terms = (0..spec.terms)
                    .map(|_| {
                        let wave = loop {
                            let k: Vec<f64> = (0..d).map(|_| rng.random_range(-kmax..=kmax) as f64).collect();
                            if k.iter().any(|&v| v != 0.0) {
                                break k;
                            }
                        };
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        let amplitude = sign * rng.random_range(0.5..1.0) / (1.0 + norm2(&wave));
                        FourierTerm {
                            amplitude,
                            amp_direction: (0..dc).map(|_| rng.random_range(-1.0..1.0)).collect(),
                            amp_phase: rng.random_range(0.0..std::f64::consts::TAU),
                            phase: rng.random_range(0.0..std::f64::consts::TAU),
                            phase_direction: (0..dc).map(|_| rng.random_range(-1.0..1.0)).collect(),
                            wave,
                        }
                    })
                    .collect();
                Ok(Self::Fourier(terms))
            }
            "blobs" => {
                let blobs = (0..spec.terms)
                    .map(|_| Blob {
                        weight: rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -0.5 },
                        center: (0..d).map(|_| rng.random_range(-0.6..0.6)).collect(),
                        drift: (0..d * dc).map(|_| rng.random_range(-0.4..0.4)).collect(),
                        width: rng.random_range(0.15..0.35),
                    })
                    .collect();
                Ok(Self::Blobs(blobs))
            }
            other => Err(Error::Config(format!("unknown generator `{other}` (expected fourier or blobs)"))),
        }
    }

    pub fn eval(&self, x: &[f64], c: &[f64]) -> f64 {
        use std::f64::consts::{PI, TAU};
        match self {
            Self::Fourier(terms) => terms
                .iter()
                .map(|t| {
                    let a = t.amplitude * (1.0 + 0.5 * (TAU * dot(&t.amp_direction, c) + t.amp_phase).sin());
                    a * (PI * dot(&t.wave, x) + t.phase + PI * dot(&t.phase_direction, c)).sin()
                })
                .sum(),
            Self::Blobs(blobs) => blobs
                .iter()
                .map(|b| {
                    let dc = c.len();
                    let r2: f64 = (0..x.len())
                        .map(|a| {
                            let mu = b.center[a]
                                + (0..dc).map(|k| b.drift[a * dc + k] * (c[k] - 0.5)).sum::<f64>();
                            (x[a] - mu).powi(2)
                        })
                        .sum();
                    b.weight * (-r2 / (2.0 * b.width * b.width)).exp()
                })
                .sum(),
        }
    }

    /// Bound on `|f(x, c) − f(x, c′)| / |c − c′|₂`, uniform in `x`.
    pub fn condition_lipschitz(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Self::Fourier(terms) => terms
                .iter()
                .map(|t| t.amplitude.abs() * (PI * norm2(&t.amp_direction) + 1.5 * PI * norm2(&t.phase_direction)))
                .sum(),
            Self::Blobs(blobs) => blobs
                .iter()
                .map(|b| b.weight.abs() * norm2(&b.drift) / (b.width * std::f64::consts::E.sqrt()))
                .sum(),
        }
    }

    pub fn render(&self, resolution: &[usize], c: &[f64], name: &str) -> Result<Field> {
        let n: usize = resolution.iter().product();
        let mut x = vec![0.0; resolution.len()];
        let values = (0..n)
            .map(|v| {
                for (a, i) in unflatten(resolution, v).into_iter().enumerate() {
                    x[a] = index_to_coord(i, resolution[a]);
                }
                self.eval(&x, c) as f32
            })
            .collect();
        Field::new(resolution.to_vec(), 1, values, c.to_vec(), name)
    }
}

/// One member per condition; the last `test_count` become the test split.
pub fn synth_ensemble(spec: &GeneratorSpec, conditions: &[Vec<f64>], test_count: usize) -> Result<EnsembleDataset> {
    let generator = Generator::from_spec(spec)?;
    if test_count > conditions.len() {
        return Err(Error::Config(format!("{test_count} test members requested from {} conditions", conditions.len())));
    }
    if let Some(c) = conditions.iter().find(|c| c.len() != spec.params) {
        return Err(Error::Dimension(format!("condition {c:?} does not have {} parameters", spec.params)));
    }
    let members = conditions
        .iter()
        .map(|c| generator.render(&spec.resolution, c, &spec.variable))
        .collect::<Result<Vec<_>>>()?;
    let split = conditions.len() - test_count;
    let mut ds = EnsembleDataset::new(members, (0..split).collect(), (split..conditions.len()).collect())?;
    ds.generator = Some(spec.clone());
    Ok(ds)
}

/// `count` conditions uniform in `[0, 1]^params`.
pub fn random_conditions(params: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x636f_6e64);
    (0..count)
        .map(|_| (0..params).map(|_| rng.random::<f64>()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: &str) -> GeneratorSpec {
        GeneratorSpec {
            kind: kind.into(),
            seed: 4,
            resolution: vec![9, 7, 5],
            params: 2,
            terms: 6,
            max_frequency: 2,
            variable: "energy".into(),
        }
    }

    #[test]
    fn deterministic_per_spec() {
        let conds = random_conditions(2, 3, 1);
        for kind in ["fourier", "blobs"] {
            let a = synth_ensemble(&spec(kind), &conds, 1).unwrap();
            let b = synth_ensemble(&spec(kind), &conds, 1).unwrap();
            assert_eq!(a.members, b.members);
            assert_eq!(a.train, vec![0, 1]);
            assert_eq!(a.test, vec![2]);
        }
        let mut s = spec("fourier");
        s.kind = "wavelet".into();
        assert!(matches!(synth_ensemble(&s, &conds, 0), Err(Error::Config(_))));
    }

    #[test]
    fn lattice_values_match_closed_form() {
        let s = spec("fourier");
        let Generator::Fourier(terms) = Generator::from_spec(&s).unwrap() else { panic!() };
        let c = [0.3, 0.8];
        let f = Generator::Fourier(terms.clone()).render(&s.resolution, &c, "v").unwrap();
        let pi = std::f64::consts::PI;
        let mut worst = 0.0f64;
        for i in 0..9 {
            for j in 0..7 {
                for k in 0..5 {
                    let x = [-1.0 + 2.0 * i as f64 / 8.0, -1.0 + 2.0 * j as f64 / 6.0, -1.0 + 2.0 * k as f64 / 4.0];
                    let mut want = 0.0;
                    for t in &terms {
                        let amp = t.amplitude
                            * (1.0 + 0.5 * (2.0 * pi * (t.amp_direction[0] * c[0] + t.amp_direction[1] * c[1]) + t.amp_phase).sin());
                        let arg = pi * (t.wave[0] * x[0] + t.wave[1] * x[1] + t.wave[2] * x[2])
                            + t.phase
                            + pi * (t.phase_direction[0] * c[0] + t.phase_direction[1] * c[1]);
                        want += amp * arg.sin();
                    }
                    worst = worst.max((f.values[(i * 7 + j) * 5 + k] as f64 - want).abs());
                }
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn field_distance_stays_under_lipschitz_bound() {
        for kind in ["fourier", "blobs"] {
            let s = spec(kind);
            let g = Generator::from_spec(&s).unwrap();
            let lip = g.condition_lipschitz();
            let base = [0.4, 0.55];
            let f0 = g.render(&s.resolution, &base, "v").unwrap();
            let mut last = 0.0;
            for step in 1..=20 {
                let h = step as f64 * 0.005;
                let c = [base[0] + h, base[1] - 0.5 * h];
                let f = g.render(&s.resolution, &c, "v").unwrap();
                let rms = (f.values.iter().zip(&f0.values).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
                    / f.values.len() as f64)
                    .sqrt();
                let dist = (h * h + 0.25 * h * h).sqrt();
                assert!(rms <= lip * dist + 1e-6, "{kind}: {rms} > {}", lip * dist);
                assert!(rms - last <= lip * 0.005 * 1.25f64.sqrt() + 1e-6, "{kind}: jump at {step}");
                last = rms;
            }
            assert!(last > 0.0);
        }
    }
}
