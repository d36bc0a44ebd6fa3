//! Observing-system simulation: synthesize truth fields, emulate gridded
//! products, cut straight swath segments at random headings inside a
//! margin-inset region, and add the structured error components.
//!
//! Everything is keyed off one master seed: field seeds, segment
//! placements and per-component error seeds derive from it, so a dataset
//! is a pure function of (config, seed, n_segments).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SwotError};
use crate::errorsim::{corrupt, ErrorKind, ErrorSpec};
use crate::fieldgen::{emulate_gridded_product, synth_ssh_field, FieldSpec, GriddedPreset};
use crate::rng::Rng;
use crate::swath::{build_swath_grid, sample_swath, SwathGrid};
use crate::training::CalSample;

/// Truth-field parameters at the experiment level; per-field seeds are
/// derived from the master seed. `segments_per_field` chords are cut from
/// each field, placed inside an `inset_frac` margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    pub nx: usize,
    pub ny: usize,
    pub pixel_km: f64,
    pub spectral_slope: f64,
    pub rolloff_km: f64,
    pub target_std_m: f64,
    pub segments_per_field: usize,
    pub inset_frac: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        FieldParams {
            nx: 640,
            ny: 640,
            pixel_km: 2.0,
            spectral_slope: 4.0,
            rolloff_km: 300.0,
            target_std_m: 0.30,
            segments_per_field: 8,
            inset_frac: 0.1,
        }
    }
}

impl FieldParams {
    pub fn to_spec(&self, seed: u64) -> FieldSpec {
        FieldSpec {
            nx: self.nx,
            ny: self.ny,
            pixel_km: self.pixel_km,
            spectral_slope: self.spectral_slope,
            rolloff_km: self.rolloff_km,
            target_std_m: self.target_std_m,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.to_spec(0).validate()?;
        if self.segments_per_field == 0 {
            return Err(SwotError::Config("segments_per_field must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.inset_frac) {
            return Err(SwotError::Config("inset_frac must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Swath-grid parameters of the experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub n_along: usize,
    pub pixel_km: f64,
    pub inner_km: f64,
    pub outer_km: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        // 320 km segments keep the desk-scale training budget tractable
        // on a single core; longer segments scale the cost linearly
        GridParams { n_along: 160, pixel_km: 2.0, inner_km: 10.0, outer_km: 60.0 }
    }
}

impl GridParams {
    pub fn build(&self) -> Result<Arc<SwathGrid>> {
        Ok(Arc::new(build_swath_grid(self.n_along, self.pixel_km, self.inner_km, self.outer_km)?))
    }
}

/// Error-component amplitudes at the experiment level; per-segment seeds
/// are derived from the master seed and the segment index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorParams {
    pub kind: ErrorKind,
    pub edge_std_m: f64,
    pub corr_km: f64,
}

pub fn default_error_params() -> Vec<ErrorParams> {
    crate::errorsim::default_error_specs(0)
        .into_iter()
        .map(|s| ErrorParams { kind: s.kind, edge_std_m: s.edge_std_m, corr_km: s.corr_km })
        .collect()
}

/// Provenance of one generated segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub index: usize,
    pub field_index: usize,
    pub origin_km: (f64, f64),
    pub heading_rad: f64,
    pub rms_truth: f64,
    pub rms_error: f64,
}

/// Generate `n_segments` calibration samples. Fields are synthesized on
/// demand (`segments_per_field` chords each); gridded products are blurred
/// and noised at field level and sampled on the same swath coordinates.
pub fn generate_dataset(
    field: &FieldParams,
    grid_params: &GridParams,
    errors: &[ErrorParams],
    preset: &GriddedPreset,
    n_segments: usize,
    seed: u64,
) -> Result<(Vec<CalSample>, Vec<SegmentMeta>)> {
    generate_segment_range(field, grid_params, errors, preset, 0, n_segments, seed)
}

/// Segments [lo, hi) of the dataset keyed by `seed`. Every segment derives
/// its state from (seed, global index), so any window reproduces exactly
/// the bytes of the full run restricted to it; this is what lets dataset
/// generation shard across threads by field group.
pub fn generate_segment_range(
    field: &FieldParams,
    grid_params: &GridParams,
    errors: &[ErrorParams],
    preset: &GriddedPreset,
    lo: usize,
    hi: usize,
    seed: u64,
) -> Result<(Vec<CalSample>, Vec<SegmentMeta>)> {
    field.validate()?;
    preset.validate()?;
    let grid = grid_params.build()?;
    let mut samples = Vec::with_capacity(hi - lo);
    let mut metas = Vec::with_capacity(hi - lo);
    let mut field_cache: Option<(usize, crate::fieldgen::Field2D, crate::fieldgen::Field2D)> = None;

    for index in lo..hi {
        let field_index = index / field.segments_per_field;
        if field_cache.as_ref().map(|(i, _, _)| *i) != Some(field_index) {
            let fseed = Rng::child(seed, 0xf1e1d000 + field_index as u64).next_u64();
            let truth_field = synth_ssh_field(&field.to_spec(fseed))?;
            let product = emulate_gridded_product(&truth_field, preset, fseed ^ 0x9d0d)?;
            field_cache = Some((field_index, truth_field, product));
        }
        let (_, truth_field, product) = field_cache.as_ref().unwrap();

        let mut rng = Rng::child(seed, 0x5e900000 + index as u64);
        let (origin, heading) = place_segment(field, grid_params, &grid, &mut rng)?;
        let truth = sample_swath(truth_field, &grid, origin, heading)?;
        let gridded = sample_swath(product, &grid, origin, heading)?;

        let specs: Vec<ErrorSpec> = errors
            .iter()
            .map(|e| ErrorSpec {
                kind: e.kind,
                edge_std_m: e.edge_std_m,
                corr_km: e.corr_km,
                seed: Rng::child(seed, 0xe7700000 + (index as u64) * 16 + kind_tag(e.kind))
                    .next_u64(),
            })
            .collect();
        let (obs, bundle) = corrupt(&truth, &specs)?;

        metas.push(SegmentMeta {
            index,
            field_index,
            origin_km: origin,
            heading_rad: heading,
            rms_truth: truth.rms(),
            rms_error: bundle.total.rms(),
        });
        samples.push(CalSample { truth, obs, gridded, bundle: Some(bundle) });
    }
    Ok((samples, metas))
}

fn kind_tag(kind: ErrorKind) -> u64 {
    match kind {
        ErrorKind::Roll => 1,
        ErrorKind::Phase => 2,
        ErrorKind::Timing => 3,
        ErrorKind::BaselineDilation => 4,
        ErrorKind::WetTropo => 5,
    }
}

/// Uniform random placement of a full swath rectangle inside the inset
/// region: heading first, then a center inside the heading-dependent
/// feasible box. Errors if the segment cannot fit at any position.
fn place_segment(
    field: &FieldParams,
    grid_params: &GridParams,
    grid: &Arc<SwathGrid>,
    rng: &mut Rng,
) -> Result<((f64, f64), f64)> {
    let lx = (field.nx - 1) as f64 * field.pixel_km;
    let ly = (field.ny - 1) as f64 * field.pixel_km;
    let inset_x = field.inset_frac * lx;
    let inset_y = field.inset_frac * ly;
    let half_len = (grid.n_along() - 1) as f64 * grid.pixel_km() / 2.0;
    let outer = grid_params.outer_km;

    let heading = rng.uniform() * 2.0 * std::f64::consts::PI;
    let (c, s) = (heading.cos().abs(), heading.sin().abs());
    let margin_x = half_len * c + outer * s;
    let margin_y = half_len * s + outer * c;
    let x_lo = inset_x + margin_x;
    let x_hi = lx - inset_x - margin_x;
    let y_lo = inset_y + margin_y;
    let y_hi = ly - inset_y - margin_y;
    if x_lo >= x_hi || y_lo >= y_hi {
        return Err(SwotError::Config(format!(
            "segment of {} rows does not fit the {lx} x {ly} km field inside a {} inset",
            grid.n_along(),
            field.inset_frac
        )));
    }
    let cx = x_lo + rng.uniform() * (x_hi - x_lo);
    let cy = y_lo + rng.uniform() * (y_hi - y_lo);
    // origin is row 0 of the segment; the center sits half a length along
    let origin = (cx - half_len * heading.cos(), cy - half_len * heading.sin());
    Ok((origin, heading))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::PresetName;

    fn tiny_field() -> FieldParams {
        FieldParams { nx: 320, ny: 320, segments_per_field: 4, ..FieldParams::default() }
    }

    fn tiny_grid() -> GridParams {
        GridParams { n_along: 64, ..GridParams::default() }
    }

    #[test]
    fn dataset_is_deterministic() {
        let f = tiny_field();
        let g = tiny_grid();
        let errs = default_error_params();
        let preset = GriddedPreset::neural_like();
        let (a, ma) = generate_dataset(&f, &g, &errs, &preset, 5, 42).unwrap();
        let (b, mb) = generate_dataset(&f, &g, &errs, &preset, 5, 42).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.truth.values(), y.truth.values());
            assert_eq!(x.obs.values(), y.obs.values());
            assert_eq!(x.gridded.values(), y.gridded.values());
        }
        assert_eq!(ma.len(), mb.len());
        for (x, y) in ma.iter().zip(mb.iter()) {
            assert_eq!(x.origin_km, y.origin_km);
            assert_eq!(x.heading_rad, y.heading_rad);
        }
        // different seed gives different placements
        let (_, mc) = generate_dataset(&f, &g, &errs, &preset, 5, 43).unwrap();
        assert_ne!(ma[0].heading_rad, mc[0].heading_rad);
    }

    #[test]
    fn segments_share_fields_in_groups() {
        let f = tiny_field();
        let g = tiny_grid();
        let errs = default_error_params();
        let preset = GriddedPreset::named(PresetName::NeuralLike);
        let (_, metas) = generate_dataset(&f, &g, &errs, &preset, 9, 7).unwrap();
        assert_eq!(metas[0].field_index, 0);
        assert_eq!(metas[3].field_index, 0);
        assert_eq!(metas[4].field_index, 1);
        assert_eq!(metas[8].field_index, 2);
    }

    #[test]
    fn oversized_segment_is_rejected() {
        let f = FieldParams { nx: 64, ny: 64, ..FieldParams::default() };
        let g = GridParams { n_along: 256, ..GridParams::default() };
        let errs = default_error_params();
        let preset = GriddedPreset::neural_like();
        assert!(generate_dataset(&f, &g, &errs, &preset, 1, 0).is_err());
    }

    #[test]
    fn observation_equals_truth_plus_total_error() {
        let f = tiny_field();
        let g = tiny_grid();
        let errs = default_error_params();
        let preset = GriddedPreset::neural_like();
        let (samples, _) = generate_dataset(&f, &g, &errs, &preset, 3, 11).unwrap();
        for s in &samples {
            let bundle = s.bundle.as_ref().unwrap();
            for i in 0..s.truth.values().len() {
                let want = s.truth.values()[i] + bundle.total.values()[i];
                assert!((s.obs.values()[i] - want).abs() < 1e-12);
            }
        }
    }
}
