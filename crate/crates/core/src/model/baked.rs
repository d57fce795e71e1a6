use crate::embedding::{locate_axis, AxisSpan, ChannelManifest, Corners, FeatureGrid, MAX_DIM};
use crate::error::{Error, Result};
use crate::io::ArtifactMeta;
use crate::model::config::ModelConfig;
use crate::model::net::{concat_rows, prepare_inputs, DrrNet, FieldPredictor};
use crate::numerics::Mlp;

/// Frozen query structure: the refined spatial lattice, one refined line per
/// condition parameter and the decoder. Queries are interpolation plus the
/// decoder; refiner weights are only present when explicitly retained.
#[derive(Clone, Debug)]
pub struct BakedStructure {
    config: ModelConfig,
    pub spatial: FeatureGrid<f32>,
    pub condition_lines: Vec<FeatureGrid<f32>>,
    pub decoder: Mlp<f32>,
    pub spatial_manifest: ChannelManifest,
    pub condition_manifest: Option<ChannelManifest>,
    /// Full trainable model, kept only when baking with retention.
    pub retained: Option<DrrNet<f32>>,
    meta: ArtifactMeta,
    fingerprint: String,
}

/// Runs unification, lift and refiners over every lattice vertex once.
pub fn bake(model: &DrrNet<f32>, retain: bool) -> Result<BakedStructure> {
    if let Some(name) = model.first_non_finite() {
        return Err(Error::Numeric(format!("parameter {name} holds a non-finite value")));
    }
    let spatial = model.spatial.materialize()?;
    let (condition_lines, condition_manifest) = match &model.condition {
        None => (Vec::new(), None),
        Some(b) => (b.materialize_groups()?, Some(b.manifest())),
    };
    BakedStructure::from_parts(
        model.config().clone(),
        spatial,
        condition_lines,
        model.decoder.clone(),
        model.spatial.manifest(),
        condition_manifest,
        retain.then(|| model.clone()),
        ArtifactMeta::default(),
    )
}

impl BakedStructure {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        config: ModelConfig,
        spatial: FeatureGrid<f32>,
        condition_lines: Vec<FeatureGrid<f32>>,
        decoder: Mlp<f32>,
        spatial_manifest: ChannelManifest,
        condition_manifest: Option<ChannelManifest>,
        retained: Option<DrrNet<f32>>,
        meta: ArtifactMeta,
    ) -> Result<Self> {
        if spatial.dim() != config.dim_x() || condition_lines.len() != config.dim_c() {
            return Err(Error::Format(format!(
                "baked structure of rank {}/{} does not match config rank {}/{}",
                spatial.dim(),
                condition_lines.len(),
                config.dim_x(),
                config.dim_c()
            )));
        }
        let width = spatial.channels() + condition_lines.iter().map(|l| l.channels()).sum::<usize>();
        if width != decoder.in_dim() {
            return Err(Error::Format(format!(
                "baked feature width {width} does not match decoder input {}",
                decoder.in_dim()
            )));
        }
        let mut b = Self {
            config,
            spatial,
            condition_lines,
            decoder,
            spatial_manifest,
            condition_manifest,
            retained,
            meta,
            fingerprint: String::new(),
        };
        b.fingerprint = crate::io::baked_fingerprint(&b);
        Ok(b)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn meta(&self) -> &ArtifactMeta {
        &self.meta
    }

    /// Replaces the stored context (normalization, names, provenance).
    pub fn with_meta(mut self, meta: ArtifactMeta) -> Self {
        self.meta = meta;
        self.fingerprint = crate::io::baked_fingerprint(&self);
        self
    }

    /// Content hash of the canonical serialized artifact.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Learnable values the artifact stores (lattices and decoder).
    pub fn stored_values(&self) -> usize {
        self.spatial.data().len()
            + self.condition_lines.iter().map(|l| l.data().len()).sum::<usize>()
            + crate::numerics::Parameters::param_count(&self.decoder)
    }

    /// Fused features fed to the decoder, `n × decoder_in`.
    pub fn features(&self, x: &[f32], c: &[f32], n: usize) -> Result<Vec<f32>> {
        let cc = prepare_inputs(self.config.dim_x(), self.config.dim_c(), x, c, n)?;
        let ws = self.spatial.channels();
        let mut fs = vec![0f32; n * ws];
        let res = self.spatial.resolution();
        let d = res.len();
        for (p, out) in x.chunks(d).zip(fs.chunks_mut(ws)) {
            let mut spans = [AxisSpan::default(); MAX_DIM];
            for a in 0..d {
                spans[a] = locate_axis(p[a], res[a]);
            }
            Corners::new(res, &spans[..d]).accumulate(self.spatial.data(), ws, out);
        }
        if self.condition_lines.is_empty() {
            return Ok(fs);
        }
        let dc = self.condition_lines.len();
        let gw = self.condition_lines[0].channels();
        let mut fc = vec![0f32; n * dc * gw];
        for (i, &ck) in cc.iter().enumerate() {
            let line = &self.condition_lines[i % dc];
            let r = line.resolution();
            let span = locate_axis(ck, r[0]);
            Corners::new(r, &[span]).accumulate(line.data(), gw, &mut fc[i * gw..(i + 1) * gw]);
        }
        Ok(concat_rows(&fs, ws, &fc, dc * gw, n))
    }

    pub fn forward(&self, x: &[f32], c: &[f32], n: usize) -> Result<Vec<f32>> {
        let f = self.features(x, c, n)?;
        Ok(self.decoder.forward(&f, n))
    }
}

/// Batched evaluation of a baked structure.
pub fn baked_forward(baked: &BakedStructure, x: &[f32], c: &[f32], n: usize) -> Result<Vec<f32>> {
    baked.forward(x, c, n)
}

impl FieldPredictor for BakedStructure {
    fn dim_x(&self) -> usize {
        self.config.dim_x()
    }

    fn dim_c(&self) -> usize {
        self.config.dim_c()
    }

    fn out_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    fn predict(&self, x: &[f32], c: &[f32], n: usize) -> Result<Vec<f32>> {
        self.forward(x, c, n)
    }
}
