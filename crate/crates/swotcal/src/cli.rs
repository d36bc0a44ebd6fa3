//! Command implementations behind the `swotcal` binary, plus the on-disk
//! dataset and model-checkpoint formats.
//!
//! A dataset directory holds one `seg_NNNNN.swt` per segment (truth,
//! observation, gridded product and the five error components) and a
//! `manifest.json` recording the tool version, the resolved config, its
//! hash and per-segment provenance. Model checkpoints are single SWT files
//! whose header carries the architecture and grid so they reload
//! standalone.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::BnMode;
use crate::calnet::{build_model, Ablations, ArchConfig, CalCNN};
use crate::config::{ExperimentConfig, ScaleParams};
use crate::error::{Result, SwotError};
use crate::errorsim::{ErrorBundle, ErrorKind};
use crate::metrics::{compare, curves_to_csv, reports_to_json, EvalEntry};
use crate::osse::{GridParams, SegmentMeta};
use crate::scale_space::{band_energy, decompose, reconstruct, ScaleStack};
use crate::swath::{SwathField, SwathGrid};
use crate::swt::{self, SwtFile, SwtHeader};
use crate::training::{train, CalSample, TrainHistory};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Number of worker threads for segment generation. Defaults to the
/// machine parallelism; SWOTCAL_THREADS overrides it (oversubscription is
/// allowed). Generation order and output bytes are identical for any value.
pub fn effective_threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("SWOTCAL_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(0) | Err(_) => avail,
            Ok(n) => n,
        },
        Err(_) => avail,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSegment {
    pub file: String,
    #[serde(flatten)]
    pub meta: SegmentMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub swotcal_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_segments: usize,
    pub config: ExperimentConfig,
    pub segments: Vec<ManifestSegment>,
}

const ERR_ARRAYS: [(ErrorKind, &str); 5] = [
    (ErrorKind::Roll, "err_roll"),
    (ErrorKind::Phase, "err_phase"),
    (ErrorKind::Timing, "err_timing"),
    (ErrorKind::BaselineDilation, "err_baseline_dilation"),
    (ErrorKind::WetTropo, "err_wet_tropo"),
];

fn sample_to_swt(sample: &CalSample, meta: &SegmentMeta, grid: &GridParams) -> Result<SwtFile> {
    let dims = vec![grid.n_along, 2 * ((grid.outer_km - grid.inner_km) / grid.pixel_km) as usize + 2];
    let mut names = vec!["truth".to_string(), "obs".to_string(), "gridded".to_string()];
    let mut arrays = vec![
        sample.truth.values().to_vec(),
        sample.obs.values().to_vec(),
        sample.gridded.values().to_vec(),
    ];
    let bundle = sample
        .bundle
        .as_ref()
        .ok_or_else(|| SwotError::Data("segment is missing its error bundle".into()))?;
    for (kind, name) in ERR_ARRAYS {
        let comp = bundle
            .components
            .iter()
            .find(|(k, _)| *k == kind)
            .ok_or_else(|| SwotError::Data(format!("bundle missing component {}", name)))?;
        names.push(name.to_string());
        arrays.push(comp.1.values().to_vec());
    }
    let mut header = SwtHeader::new("cal_sample", vec![dims; arrays.len()]);
    header.names = Some(names);
    header.meta = json!({
        "grid": grid,
        "index": meta.index,
        "field_index": meta.field_index,
        "origin_km": meta.origin_km,
        "heading_rad": meta.heading_rad,
    });
    SwtFile::new(header, arrays)
}

fn swt_to_sample(file: &SwtFile, grid: &Arc<SwathGrid>) -> Result<CalSample> {
    if file.header.kind != "cal_sample" {
        return Err(SwotError::Data(format!("expected a cal_sample file, got {}", file.header.kind)));
    }
    let get = |name: &str| -> Result<SwathField> {
        let i = file.find(name)?;
        SwathField::new(grid.clone(), file.arrays[i].clone())
    };
    let truth = get("truth")?;
    let obs = get("obs")?;
    let gridded = get("gridded")?;
    let mut components = Vec::with_capacity(5);
    let mut total = vec![0.0; grid.n_pixels()];
    for (kind, name) in ERR_ARRAYS {
        let comp = get(name)?;
        for (t, v) in total.iter_mut().zip(comp.values()) {
            *t += v;
        }
        components.push((kind, comp));
    }
    let total = SwathField::new(grid.clone(), total)?;
    Ok(CalSample { truth, obs, gridded, bundle: Some(ErrorBundle { components, total }) })
}

fn segment_file_name(index: usize) -> String {
    format!("seg_{index:05}.swt")
}

/// Generate a dataset and write it under `out_dir`. Deterministic per
/// (config, seed); segment files are byte-identical across runs and
/// thread counts.
pub fn cmd_simulate(
    config: &ExperimentConfig,
    out_dir: &Path,
    n_segments: usize,
    seed: u64,
) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let threads = effective_threads();
    let spf = config.field.segments_per_field;
    let n_fields = n_segments.div_ceil(spf.max(1));

    // field-group granularity: each group derives everything from the
    // master seed, so parallel generation reproduces the sequential bytes
    let groups: Vec<(usize, usize)> = (0..n_fields)
        .map(|f| (f * spf, ((f + 1) * spf).min(n_segments)))
        .filter(|(lo, hi)| lo < hi)
        .collect();
    let gen_group = |&(lo, hi): &(usize, usize)| -> Result<(Vec<CalSample>, Vec<SegmentMeta>)> {
        crate::osse::generate_segment_range(
            &config.field,
            &config.grid,
            &config.errors,
            &config.gridded_preset,
            lo,
            hi,
            seed,
        )
    };

    let mut results: Vec<Option<(Vec<CalSample>, Vec<SegmentMeta>)>> =
        (0..groups.len()).map(|_| None).collect();
    if threads <= 1 || groups.len() <= 1 {
        for (i, g) in groups.iter().enumerate() {
            results[i] = Some(gen_group(g)?);
        }
    } else {
        let errors = std::sync::Mutex::new(Vec::new());
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(groups.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= groups.len() {
                        break;
                    }
                    match gen_group(&groups[i]) {
                        Ok(r) => {
                            slots.lock().unwrap()[i] = Some(r);
                        }
                        Err(e) => {
                            errors.lock().unwrap().push(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
    }

    let mut segments = Vec::with_capacity(n_segments);
    for group in results.into_iter() {
        let (samples, metas) = group.expect("group generated");
        for (sample, meta) in samples.iter().zip(metas) {
            let file_name = segment_file_name(meta.index);
            let swt_file = sample_to_swt(sample, &meta, &config.grid)?;
            swt::write(&out_dir.join(&file_name), &swt_file)?;
            segments.push(ManifestSegment { file: file_name, meta });
        }
    }

    let manifest = Manifest {
        swotcal_version: TOOL_VERSION.to_string(),
        config_hash: config.hash(),
        seed,
        n_segments,
        config: config.clone(),
        segments,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let tmp = out_dir.join("manifest.json.tmp");
    std::fs::write(&tmp, &text)?;
    std::fs::rename(&tmp, out_dir.join("manifest.json"))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| SwotError::Data(format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| SwotError::Data(format!("{}: {e}", path.display())))?;
    Ok(manifest)
}

/// Load every segment of a dataset directory, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<CalSample>)> {
    let manifest = load_manifest(dir)?;
    let grid = manifest.config.grid.build()?;
    let mut samples = Vec::with_capacity(manifest.segments.len());
    for seg in &manifest.segments {
        let file = swt::read(&dir.join(&seg.file))?;
        samples.push(swt_to_sample(&file, &grid)?);
    }
    Ok((manifest, samples))
}

/// Split segments into train/validation by field groups, so validation
/// fields (and their seeds) are disjoint from training.
pub fn split_by_field(
    samples: Vec<CalSample>,
    metas: &[ManifestSegment],
    val_fraction: f64,
) -> (Vec<CalSample>, Vec<CalSample>) {
    let n_fields = metas.iter().map(|s| s.meta.field_index).max().map_or(1, |m| m + 1);
    let val_fields = ((n_fields as f64 * val_fraction).ceil() as usize).clamp(1, n_fields - 1);
    let first_val_field = n_fields - val_fields;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (sample, seg) in samples.into_iter().zip(metas) {
        if seg.meta.field_index >= first_val_field {
            val.push(sample);
        } else {
            train.push(sample);
        }
    }
    (train, val)
}

/// Persist a model checkpoint: architecture + grid in the header, all
/// state tensors in the payload.
pub fn save_model(path: &Path, model: &CalCNN, grid_params: &GridParams, config_hash: &str) -> Result<()> {
    let tensors = model.state_tensors();
    let mut header = SwtHeader::new(
        "calcnn_model",
        tensors.iter().map(|(_, dims, _)| dims.clone()).collect(),
    );
    header.names = Some(tensors.iter().map(|(n, _, _)| n.clone()).collect());
    header.sigmas_km = Some(model.cfg().scales()?.sigmas_km().to_vec());
    header.meta = json!({
        "arch": model.cfg(),
        "grid": grid_params,
        "config_hash": config_hash,
        "swotcal_version": TOOL_VERSION,
    });
    let file = SwtFile::new(header, tensors.into_iter().map(|(_, _, v)| v).collect())?;
    swt::write(path, &file)
}

pub fn load_model(path: &Path) -> Result<(CalCNN, GridParams)> {
    let file = swt::read(path)?;
    if file.header.kind != "calcnn_model" {
        return Err(SwotError::Data(format!("{} is not a model file", path.display())));
    }
    let arch: ArchConfig = serde_json::from_value(file.header.meta["arch"].clone())
        .map_err(|e| SwotError::Data(format!("bad arch metadata: {e}")))?;
    let grid_params: GridParams = serde_json::from_value(file.header.meta["grid"].clone())
        .map_err(|e| SwotError::Data(format!("bad grid metadata: {e}")))?;
    let grid = grid_params.build()?;
    let mut model = build_model(&arch, &grid, 0)?;
    let names = file
        .header
        .names
        .clone()
        .ok_or_else(|| SwotError::Data("model file lacks tensor names".into()))?;
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = names
        .into_iter()
        .zip(file.header.dims.iter())
        .zip(file.arrays.iter())
        .map(|((n, d), a)| (n, d.clone(), a.clone()))
        .collect();
    model.load_state(&tensors)?;
    Ok((model, grid_params))
}

/// Architecture/ablation overrides accepted by `cmd_train`.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub arch_size: Option<String>,
    pub epochs: Option<usize>,
    pub scales: Option<String>,
    pub ablations: Ablations,
    pub seed: Option<u64>,
    pub resume_from: Option<PathBuf>,
}

pub struct TrainOutput {
    pub history: TrainHistory,
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub val_rmse: f64,
    pub gridded_rmse: f64,
}

/// Train on a simulated dataset directory and write the checkpoint plus a
/// JSON-lines history next to it.
pub fn cmd_train(data_dir: &Path, out_model: &Path, ov: &TrainOverrides) -> Result<TrainOutput> {
    let (manifest, samples) = load_dataset(data_dir)?;
    let mut config = manifest.config.clone();
    if let Some(size) = &ov.arch_size {
        let (channels, blocks) = ArchConfig::parse_size(size)?;
        config.arch.n_channels = channels;
        config.arch.n_blocks = blocks;
    }
    if let Some(e) = ov.epochs {
        config.train.epochs = e;
    }
    if let Some(s) = &ov.scales {
        let sp = ScaleParams::parse(s)?;
        config.scales = sp;
    }
    config.arch.ablations = ov.ablations;
    config.arch.scale_bands = config.scales.n_bands;
    config.arch.scale_delta_km = config.scales.delta_km;
    let seed = ov.seed.unwrap_or(manifest.seed);
    config.validate()?;

    let grid = config.grid.build()?;
    let (train_set, val_set) = split_by_field(samples, &manifest.segments, config.train.val_fraction);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(SwotError::Data(
            "dataset too small to split into train and validation fields".into(),
        ));
    }

    let mut model = match &ov.resume_from {
        Some(p) => {
            let (m, g) = load_model(p)?;
            if g.build()?.as_ref() != grid.as_ref() {
                return Err(SwotError::Data("resume checkpoint grid does not match dataset".into()));
            }
            m
        }
        None => build_model(&config.arch, &grid, seed)?,
    };

    let history_path = out_model.with_extension("history.jsonl");
    let t0 = Instant::now();
    let history = train(
        &mut model,
        &train_set,
        &val_set,
        &config.train.to_train_config(seed),
        Some(&history_path),
    )?;
    let train_secs = t0.elapsed().as_secs_f64();

    save_model(out_model, &model, &config.grid, &config.hash())?;

    // final validation metrics
    let mut se = 0.0;
    let mut seg = 0.0;
    let mut n = 0usize;
    for s in &val_set {
        let pred = model.forward_fields(&s.obs, &s.gridded, BnMode::Eval)?;
        se += pred
            .values()
            .iter()
            .zip(s.truth.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        seg += s
            .gridded
            .values()
            .iter()
            .zip(s.truth.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        n += s.truth.values().len();
    }
    let val_rmse = (se / n as f64).sqrt();
    let gridded_rmse = (seg / n as f64).sqrt();
    eprintln!(
        "trained {} epochs in {train_secs:.1} s: best val RMSE {:.6} m (epoch {}), gridded baseline {:.6} m",
        config.train.epochs, history.best_val_rmse, history.best_epoch, gridded_rmse
    );
    Ok(TrainOutput {
        history,
        model_path: out_model.to_path_buf(),
        history_path,
        val_rmse,
        gridded_rmse,
    })
}

pub struct EvalOutput {
    pub reports_json: String,
    pub calibrated_rmse: f64,
    pub gridded_rmse: f64,
}

/// Evaluate a checkpoint over a dataset directory; write the report JSON
/// and the calibrated per-scale curve CSV.
pub fn cmd_eval(
    model_path: &Path,
    data_dir: &Path,
    report_path: &Path,
    curves_path: &Path,
) -> Result<EvalOutput> {
    let (mut model, model_grid) = load_model(model_path)?;
    let (manifest, samples) = load_dataset(data_dir)?;
    if model_grid.build()?.as_ref() != manifest.config.grid.build()?.as_ref() {
        return Err(SwotError::Data("model grid does not match dataset grid".into()));
    }
    let mut preds = Vec::with_capacity(samples.len());
    for s in &samples {
        preds.push(model.forward_fields(&s.obs, &s.gridded, BnMode::Eval)?);
    }
    let curve_scales = manifest.config.eval.curve_scales.scales()?;
    let band_scales = manifest.config.scales.scales()?;
    let entries = vec![EvalEntry { name: "calibrated".into(), preds }];
    let reports = compare(
        &entries,
        &samples,
        &curve_scales,
        &band_scales,
        &manifest.config_hash,
        manifest.seed,
    )?;
    let json = reports_to_json(&reports);
    std::fs::write(report_path, &json)?;
    let calibrated = reports
        .iter()
        .find(|r| r.name == "calibrated")
        .expect("calibrated entry present");
    std::fs::write(curves_path, curves_to_csv(calibrated))?;
    let gridded = reports.iter().find(|r| r.name == "gridded").expect("gridded baseline");
    Ok(EvalOutput {
        reports_json: json,
        calibrated_rmse: calibrated.rmse_m,
        gridded_rmse: gridded.rmse_m,
    })
}

/// Read a swath field out of an SWT file (either a bare swath_field or a
/// named array of a cal_sample segment).
pub fn read_swath_field(path: &Path, array: &str) -> Result<(SwathField, GridParams)> {
    let file = swt::read(path)?;
    let grid_params: GridParams = serde_json::from_value(file.header.meta["grid"].clone())
        .map_err(|e| SwotError::Data(format!("{}: missing grid metadata: {e}", path.display())))?;
    let grid = grid_params.build()?;
    let idx = match file.header.kind.as_str() {
        "swath_field" => 0,
        "cal_sample" => file.find(array)?,
        other => {
            return Err(SwotError::Data(format!(
                "cannot read a swath field from a '{other}' file"
            )))
        }
    };
    Ok((SwathField::new(grid, file.arrays[idx].clone())?, grid_params))
}

/// Write a swath field as a standalone SWT file.
pub fn write_swath_field(path: &Path, field: &SwathField, grid_params: &GridParams) -> Result<()> {
    let mut header = SwtHeader::new(
        "swath_field",
        vec![vec![field.grid().n_along(), field.grid().n_across()]],
    );
    header.meta = json!({ "grid": grid_params });
    let file = SwtFile::new(header, vec![field.values().to_vec()])?;
    swt::write(path, &file)
}

/// Decompose a swath field into a scale stack file.
pub fn cmd_decompose(input: &Path, array: &str, scales: &str, out: &Path) -> Result<()> {
    let (field, grid_params) = read_swath_field(input, array)?;
    let sp = ScaleParams::parse(scales)?;
    let list = sp.scales()?;
    let stack = decompose(&field, &list)?;
    let g = field.grid();
    let mut header = SwtHeader::new(
        "scale_stack",
        vec![vec![stack.n_bands(), g.n_along(), g.n_across()]],
    );
    header.sigmas_km = Some(list.sigmas_km().to_vec());
    header.meta = json!({ "grid": grid_params, "source": input.display().to_string() });
    let file = SwtFile::new(header, vec![stack.bands().to_vec()])?;
    swt::write(out, &file)
}

pub fn read_scale_stack(path: &Path) -> Result<ScaleStack> {
    let file = swt::read(path)?;
    if file.header.kind != "scale_stack" {
        return Err(SwotError::Data(format!("{} is not a scale_stack file", path.display())));
    }
    let grid_params: GridParams = serde_json::from_value(file.header.meta["grid"].clone())
        .map_err(|e| SwotError::Data(format!("bad grid metadata: {e}")))?;
    let sigmas = file
        .header
        .sigmas_km
        .clone()
        .ok_or_else(|| SwotError::Data("scale_stack lacks sigmas_km".into()))?;
    let scales = crate::scale_space::ScaleList::new(sigmas)?;
    ScaleStack::from_parts(grid_params.build()?, scales, file.arrays[0].clone())
}

/// Reconstruct a field from a stack file (round-trip check for
/// `cmd_decompose`).
pub fn cmd_reconstruct(input: &Path, out: &Path) -> Result<()> {
    let stack = read_scale_stack(input)?;
    let field = reconstruct(&stack);
    let file = swt::read(input)?;
    let grid_params: GridParams =
        serde_json::from_value(file.header.meta["grid"].clone()).expect("validated above");
    write_swath_field(out, &field, &grid_params)
}

/// Band variance fractions before/after a batch-style rescale. For a
/// dataset directory the rescale statistics come from one half of the
/// segments and the variances from the other; for a single stack file the
/// fractions are per-stack and the post column rescales by its own bands.
pub fn cmd_bands(input: &Path, out: &Path) -> Result<()> {
    let mut csv = String::from("band,sigma_km,fraction_pre,variance_post\n");
    if input.is_dir() {
        let (manifest, samples) = load_dataset(input)?;
        let scales = manifest.config.scales.scales()?;
        let (pre, post) = crate::metrics::observation_band_variance(&samples, &scales)?;
        for b in 0..pre.len() {
            let sigma = if b < scales.n_scales() { scales.sigmas_km()[b] } else { f64::INFINITY };
            csv.push_str(&format!("{b},{sigma},{:.17e},{:.17e}\n", pre[b], post[b]));
        }
    } else {
        let stack = read_scale_stack(input)?;
        let fractions = band_energy(&stack)?;
        for (b, f) in fractions.iter().enumerate() {
            let sigma = if b < stack.scales().n_scales() {
                stack.scales().sigmas_km()[b]
            } else {
                f64::INFINITY
            };
            csv.push_str(&format!("{b},{sigma},{f:.17e},1.0\n"));
        }
    }
    std::fs::write(out, csv)?;
    Ok(())
}
