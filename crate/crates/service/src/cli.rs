//! Command-line verbs. Gallery verbs print the same JSON bodies as the
//! matching HTTP endpoints.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use matchbox_core::calib::{calibrate_capture, calibrate_from_frames, to_grayscale, CalibrationProfile, TargetPpi};
use matchbox_core::descriptor::GradientHistogram;
use matchbox_core::extract::ExtractConfig;
use matchbox_core::matcher::{match_templates, MatcherConfig};
use matchbox_core::pipeline::build_template;
use matchbox_core::spoofdet::{calibrate_threshold, decide};
use matchbox_core::synth::{
    generate_impression, perturb_genuine, render_direct_view, spoof_direct, spoof_ftir, Impression, Singularity,
    SynthSpec,
};
use matchbox_core::{RasterImage, Template};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{PipelineConfig, DEFAULT_SPOOF_THRESHOLD};
use crate::error::{ApiError, ErrorCode};
use crate::service::{Capture, Failure, Frontend, Outcome, Service};

#[derive(Debug, Parser)]
#[command(name = "matchbox", version, about = "Contactless fingerprint enrollment and matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Where the gallery and pipeline settings come from. `--gallery` alone is
/// enough; `--config` (or `MATCHBOX_CONFIG`) supplies the rest.
#[derive(Debug, Clone, Args)]
pub struct GalleryArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gallery: Option<PathBuf>,
}

impl GalleryArgs {
    pub fn resolve(&self) -> Result<PipelineConfig, ApiError> {
        let from_file = self.config.is_some() || std::env::var_os(crate::config::CONFIG_ENV).is_some();
        let mut cfg = match (&self.gallery, from_file) {
            (Some(g), false) => PipelineConfig::for_gallery(g),
            (_, true) => PipelineConfig::locate(self.config.as_deref())?,
            (None, false) => return Err(ApiError::invalid("either --gallery or --config is required")),
        };
        if let Some(g) = &self.gallery {
            cfg.gallery_dir = g.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a rectification profile from checkerboard frames.
    Calibrate {
        /// Inner-corner grid as ROWSxCOLS, e.g. 7x9.
        #[arg(long)]
        board: String,
        #[arg(long)]
        square_mm: f64,
        /// Directory of PGM/PPM frames.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rectify and rescale a raw capture with a saved profile.
    Rectify {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 500)]
        ppi: u32,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a template from a calibrated grayscale image.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop minutiae with quality below this value.
        #[arg(long)]
        min_quality: Option<f32>,
        #[arg(long)]
        dump_skeleton: Option<PathBuf>,
    },
    /// Match a probe against a template file or an enrolled finger.
    Verify {
        /// Probe as a .mbt template or a calibrated image.
        #[arg(long)]
        probe: PathBuf,
        #[arg(long, conflicts_with_all = ["subject", "gallery", "config"])]
        cand: Option<PathBuf>,
        #[command(flatten)]
        gallery: GalleryArgs,
        #[arg(long, requires = "finger")]
        subject: Option<String>,
        #[arg(long)]
        finger: Option<u8>,
        /// Direct-view image for the spoof check (gallery mode).
        #[arg(long)]
        direct: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Score a capture pair for presentation attacks.
    Spoofcheck {
        #[arg(long)]
        direct: PathBuf,
        #[arg(long)]
        ftir: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Pick the spoof threshold meeting a target false-accept rate.
    Spoofcal {
        /// Directory of live `<stem>.ppm` + `<stem>.pgm` pairs.
        #[arg(long)]
        live: PathBuf,
        /// Directory of spoof pairs, same layout.
        #[arg(long)]
        spoof: PathBuf,
        #[arg(long, default_value_t = 0.002)]
        far: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enroll one finger of a new subject.
    Enroll {
        #[command(flatten)]
        gallery: GalleryArgs,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        finger: u8,
        /// FTIR capture.
        #[arg(long)]
        image: PathBuf,
        /// Direct-view capture; enables the spoof check.
        #[arg(long)]
        direct: Option<PathBuf>,
        /// JSON file with subject metadata.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Search the gallery for a probe capture.
    Identify {
        #[command(flatten)]
        gallery: GalleryArgs,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        direct: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Show an enrolled subject.
    Subject {
        #[command(flatten)]
        gallery: GalleryArgs,
        #[arg(long)]
        id: String,
    },
    /// Gallery counters and thresholds.
    Stats {
        #[command(flatten)]
        gallery: GalleryArgs,
    },
    /// Liveness probe.
    Health,
    /// Identification latency over perturbed copies of enrolled templates.
    Bench {
        #[command(flatten)]
        gallery: GalleryArgs,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Render synthetic prints with ground truth.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        minutiae: Option<usize>,
        #[arg(long = "type")]
        kind: Option<Singularity>,
        #[arg(long)]
        size: Option<usize>,
        /// Also render the direct view as `<stem>.ppm`.
        #[arg(long)]
        direct: bool,
        /// Render impression number N (random placement and noise) instead
        /// of the canonical one.
        #[arg(long)]
        impression: Option<u64>,
        /// Render spoofed versions of both views.
        #[arg(long)]
        spoof: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, ApiError> {
    std::fs::read(path).map_err(|e| ApiError::invalid(format!("cannot read {}: {e}", path.display())))
}

fn read_image(path: &Path) -> Result<RasterImage, ApiError> {
    RasterImage::from_netpbm(&read_bytes(path)?)
        .map_err(|e| ApiError::new(ErrorCode::InvalidImage, format!("{}: {e}", path.display())))
}

fn capture(ftir: &Path, direct: Option<&Path>) -> Result<Capture, ApiError> {
    Ok(Capture { ftir: read_bytes(ftir)?, direct: direct.map(read_bytes).transpose()? })
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("response serializes"));
}

/// Prints the body (or failure body) and returns the exit code.
fn emit<T: Serialize>(outcome: Outcome<T>) -> i32 {
    match outcome {
        Ok(v) => {
            print_json(&v);
            0
        }
        Err(f) => {
            print_json(&f);
            1
        }
    }
}

fn open(args: &GalleryArgs, create: bool) -> Result<Service, Failure> {
    Ok(Service::open(&args.resolve()?, create)?)
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Enroll { gallery, subject, finger, image, direct, meta } => emit((|| {
            let svc = open(&gallery, true)?;
            let metadata = match meta {
                Some(p) => serde_json::from_slice(&read_bytes(&p)?)
                    .map_err(|e| ApiError::invalid(format!("metadata is not valid JSON: {e}")))?,
                None => Value::Object(Default::default()),
            };
            svc.enroll(&subject, finger, &capture(&image, direct.as_deref())?, metadata)
        })()),
        Command::Identify { gallery, probe, direct, top } => emit((|| {
            let svc = open(&gallery, false)?;
            svc.identify(&capture(&probe, direct.as_deref())?, top)
        })()),
        Command::Subject { gallery, id } => emit(open(&gallery, false).and_then(|s| s.subject(&id))),
        Command::Stats { gallery } => emit(open(&gallery, false).map(|s| s.stats())),
        Command::Health => emit::<_>(Ok(crate::service::health())),
        Command::Spoofcheck { direct, ftir, threshold, json } => spoofcheck(&direct, &ftir, threshold, json),
        Command::Verify { probe, cand, gallery, subject, finger, direct, threshold, json } => {
            match (cand, subject, finger) {
                (Some(c), _, _) => verify_files(&probe, &c, threshold, json),
                (None, Some(s), Some(f)) => {
                    let outcome = (|| {
                        let mut cfg = gallery.resolve()?;
                        if let Some(t) = threshold {
                            let th = cfg.thresholds.get_or_insert_with(Default::default);
                            th.verify = t;
                        }
                        let svc = Service::open(&cfg, false)?;
                        svc.verify(&s, f, &capture(&probe, direct.as_deref())?)
                    })();
                    if json || outcome.is_err() {
                        emit(outcome)
                    } else {
                        let r = outcome.expect("checked");
                        println!("{} {} score {:.3} ({} pairs, threshold {})", r.subject_id, r.finger, r.score, r.matched_pairs, r.threshold);
                        println!("{}", if r.decision == matchbox_core::matcher::Decision::Accept { "ACCEPT" } else { "REJECT" });
                        0
                    }
                }
                _ => emit::<()>(Err(ApiError::invalid("verify needs --cand or --subject and --finger").into())),
            }
        }
        Command::Extract { input, out, min_quality, dump_skeleton } => {
            emit(extract(&input, &out, min_quality, dump_skeleton.as_deref()).map_err(Failure::from))
        }
        Command::Calibrate { board, square_mm, frames, out } => {
            emit(calibrate(&board, square_mm, &frames, &out).map_err(Failure::from))
        }
        Command::Rectify { profile, ppi, input, out } => emit((|| {
            let profile = CalibrationProfile::load(&profile)?;
            let target = TargetPpi::try_from(ppi)?;
            let r = calibrate_capture(&read_image(&input)?, &profile, target)?;
            r.image.write(&out)?;
            Ok::<_, ApiError>(json!({
                "out": out,
                "width": r.image.width(),
                "height": r.image.height(),
                "ppi": target.value(),
                "upsampled": r.upsampled,
            }))
        })()
        .map_err(Failure::from)),
        Command::Spoofcal { live, spoof, far, out } => emit(spoofcal(&live, &spoof, far, &out).map_err(Failure::from)),
        Command::Bench { gallery, probes, top, workers, seed } => {
            emit(bench(&gallery, probes, top, workers, seed).map_err(Failure::from))
        }
        Command::Synth { seed, out, count, minutiae, kind, size, direct, impression, spoof } => emit(
            synth(SynthArgs { seed, out, count, minutiae, kind, size, direct, impression, spoof }).map_err(Failure::from),
        ),
        Command::Serve { config, port, host } => serve(config.as_deref(), host, port),
    }
}

fn spoofcheck(direct: &Path, ftir: &Path, threshold: Option<f64>, json: bool) -> i32 {
    let outcome = (|| {
        let mut cfg = PipelineConfig::for_gallery(".");
        if let Ok(c) = PipelineConfig::locate(None) {
            cfg = c;
        }
        cfg.spoof_threshold = threshold.unwrap_or(cfg.spoof_threshold);
        if !(0.0..=1.0).contains(&cfg.spoof_threshold) {
            return Err(ApiError::invalid("threshold must lie in [0, 1]").into());
        }
        let frontend = Frontend::from_config(&cfg)?;
        frontend.spoof_check(&read_bytes(direct)?, &read_bytes(ftir)?)
    })();
    match outcome {
        Ok(r) if !json => {
            println!(
                "direct {:.3}  ftir {:.3}  fused {:.3}  threshold {:.3}",
                r.spoof.direct, r.spoof.ftir, r.spoof.fused, r.spoof.threshold
            );
            println!("{}", if r.spoof.is_spoof { "SPOOF" } else { "LIVE" });
            0
        }
        other => emit(other),
    }
}

fn load_template(path: &Path) -> Result<Template, ApiError> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        let img = RasterImage::from_netpbm(&bytes)?;
        let img = if img.is_gray() { img } else { to_grayscale(&img)? };
        Ok(build_template::<f32>(&img, &ExtractConfig::default(), &GradientHistogram)?.0)
    } else {
        Ok(Template::from_mbt(&bytes)?)
    }
}

fn verify_files(probe: &Path, cand: &Path, threshold: Option<f64>, json: bool) -> i32 {
    let outcome = (|| {
        let a = load_template(probe)?;
        let b = load_template(cand)?;
        let th = threshold.unwrap_or(matchbox_core::gallery::Thresholds::default().verify);
        Ok::<_, ApiError>(match_templates(&a, &b, th as f32, &MatcherConfig::default())?)
    })();
    match outcome {
        Ok(r) if !json => {
            println!("score {:.3} ({} pairs, threshold {})", r.score, r.pairs.len(), r.threshold_used);
            println!("{}", if r.decision == matchbox_core::matcher::Decision::Accept { "ACCEPT" } else { "REJECT" });
            0
        }
        Ok(r) => emit::<_>(Ok(json!({
            "score": r.score,
            "matched_pairs": r.pairs.len(),
            "pairs": r.pairs,
            "decision": r.decision,
            "threshold": r.threshold_used,
        }))),
        Err(e) => emit::<()>(Err(e.into())),
    }
}

fn extract(input: &Path, out: &Path, min_quality: Option<f32>, skeleton: Option<&Path>) -> Result<Value, ApiError> {
    let img = read_image(input)?;
    let img = if img.is_gray() { img } else { to_grayscale(&img)? };
    let (mut t, ex) = build_template::<f32>(&img, &ExtractConfig::default(), &GradientHistogram)?;
    if let Some(q) = min_quality {
        let keep: Vec<bool> = t.minutiae().iter().map(|m| m.quality >= q).collect();
        t = t.retain(|i| keep[i])?;
    }
    t.write(out)?;
    if let Some(p) = skeleton {
        ex.skeleton.write(p)?;
    }
    Ok(json!({
        "out": out,
        "minutiae": t.len(),
        "quality": t.quality_summary(),
        "source_ppi": t.source_ppi(),
    }))
}

fn parse_board(board: &str) -> Result<(usize, usize), ApiError> {
    let bad = || ApiError::invalid(format!("board `{board}` is not ROWSxCOLS"));
    let (r, c) = board.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn images_in(dir: &Path, ext: &[&str]) -> Result<Vec<PathBuf>, ApiError> {
    let entries = std::fs::read_dir(dir).map_err(|e| ApiError::invalid(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| ext.contains(&e)))
        .collect();
    paths.sort();
    Ok(paths)
}

fn calibrate(board: &str, square_mm: f64, frames: &Path, out: &Path) -> Result<Value, ApiError> {
    let (rows, cols) = parse_board(board)?;
    let frames = images_in(frames, &["pgm", "ppm"])?
        .iter()
        .map(|p| {
            let img = read_image(p)?;
            Ok(if img.is_gray() { img } else { to_grayscale(&img)? })
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    let profile = calibrate_from_frames(&frames, rows, cols, square_mm)?;
    profile.save(out)?;
    Ok(json!({ "out": out, "frames": frames.len(), "profile": profile }))
}

fn spoofcal(live: &Path, spoof: &Path, far: f64, out: &Path) -> Result<Value, ApiError> {
    let frontend = Frontend::from_config(&PipelineConfig::for_gallery("."))?;
    let scores = |dir: &Path| -> Result<Vec<f64>, ApiError> {
        images_in(dir, &["ppm"])?
            .iter()
            .map(|direct| {
                let ftir = direct.with_extension("pgm");
                let d = read_image(direct)?;
                let f = read_image(&ftir)?;
                let f = if f.is_gray() { f } else { to_grayscale(&f)? };
                Ok(decide(&frontend.direct_scorer, &frontend.ftir_scorer, &d, &f, DEFAULT_SPOOF_THRESHOLD)?.fused.value)
            })
            .collect()
    };
    let live_scores = scores(live)?;
    let spoof_scores = scores(spoof)?;
    let report = calibrate_threshold(&spoof_scores, &live_scores, far)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(out, text).map_err(|e| ApiError::new(ErrorCode::StorageError, format!("{}: {e}", out.display())))?;
    Ok(json!({ "out": out, "live": live_scores.len(), "spoof": spoof_scores.len(), "report": report }))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn bench(args: &GalleryArgs, probes: usize, top: usize, workers: Option<usize>, seed: u64) -> Result<Value, ApiError> {
    let mut cfg = args.resolve()?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let svc = Service::open(&cfg, false)?;
    let ids = svc.store.subject_ids();
    if ids.is_empty() {
        return Err(ApiError::new(ErrorCode::EmptyGallery, "the gallery has no enrolled subjects"));
    }
    let mut latencies = Vec::with_capacity(probes);
    let mut rank1 = 0usize;
    for k in 0..probes {
        let id = &ids[k % ids.len()];
        let record = svc.store.get(id).expect("listed subject exists");
        let (_, t) = record.fingers.iter().next().expect("records have a finger");
        let s = seed.wrapping_add(k as u64);
        let probe = perturb_genuine(t, s, 3.0, 0.1, (s % 61) as f64 * 0.01 - 0.3, (12.0, -9.0))?;
        let start = Instant::now();
        let hits = svc.store.identify(&probe, top)?;
        latencies.push(start.elapsed().as_secs_f64() * 1e3);
        rank1 += usize::from(hits.first().is_some_and(|h| &h.subject_id == id));
    }
    let mean = latencies.iter().sum::<f64>() / latencies.len().max(1) as f64;
    latencies.sort_by(f64::total_cmp);
    let stats = svc.store.stats();
    Ok(json!({
        "subjects": stats.subjects,
        "templates": stats.templates,
        "workers": cfg.workers,
        "probes": probes,
        "top": top,
        "rank1_rate": if probes == 0 { 0.0 } else { rank1 as f64 / probes as f64 },
        "latency_ms": if latencies.is_empty() { Value::Null } else { json!({
            "mean": mean,
            "p50": percentile(&latencies, 50.0),
            "p90": percentile(&latencies, 90.0),
            "p99": percentile(&latencies, 99.0),
            "max": latencies[latencies.len() - 1],
        }) },
    }))
}

struct SynthArgs {
    seed: u64,
    out: PathBuf,
    count: u64,
    minutiae: Option<usize>,
    kind: Option<Singularity>,
    size: Option<usize>,
    direct: bool,
    impression: Option<u64>,
    spoof: bool,
}

fn synth(a: SynthArgs) -> Result<Value, ApiError> {
    std::fs::create_dir_all(&a.out).map_err(|e| ApiError::new(ErrorCode::StorageError, format!("{}: {e}", a.out.display())))?;
    let mut written = Vec::new();
    for seed in a.seed..a.seed + a.count {
        let mut spec = SynthSpec::new(seed);
        if let Some(m) = a.minutiae {
            spec.minutiae_count = m;
        }
        if let Some(k) = a.kind {
            spec.singularity = k;
        }
        if let Some(s) = a.size {
            spec.width = s;
            spec.height = s;
        }
        let (imp, stem) = match a.impression {
            Some(n) => (Impression::random(seed.wrapping_mul(1_000).wrapping_add(n), 0.35, 20.0, 6.0), format!("f{seed:06}_i{n}")),
            None => (Impression::identity(), format!("f{seed:06}")),
        };
        let stem = if a.spoof { format!("{stem}_spoof") } else { stem };
        let (mut ftir, truth) = generate_impression(&spec, &imp)?;
        if a.spoof {
            ftir = spoof_ftir(&ftir, 0.5 + (seed % 9) as f64 * 0.05)?;
        }
        ftir.write(a.out.join(format!("{stem}.pgm")))?;
        if a.direct || a.spoof {
            let mut d = render_direct_view(&spec, &Default::default())?;
            if a.spoof {
                let s = (seed % 7) as f64 * 0.04 - 0.12;
                d = spoof_direct(&d, [s, -s])?;
            }
            d.write(a.out.join(format!("{stem}.ppm")))?;
        }
        let meta = json!({ "spec": spec, "impression": imp, "truth": truth });
        std::fs::write(a.out.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta).expect("serializes"))
            .map_err(|e| ApiError::new(ErrorCode::StorageError, e.to_string()))?;
        written.push(stem);
    }
    Ok(json!({ "out": a.out, "written": written }))
}

fn serve(config: Option<&Path>, host: std::net::IpAddr, port: u16) -> i32 {
    let svc = match PipelineConfig::locate(config).and_then(|cfg| Service::open(&cfg, false)) {
        Ok(s) => Arc::new(s),
        Err(e) => return emit::<()>(Err(e.into())),
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return emit::<()>(Err(ApiError::new(ErrorCode::InternalError, e.to_string()).into())),
    };
    match rt.block_on(crate::http::serve(svc, (host, port).into())) {
        Ok(()) => 0,
        Err(e) => emit::<()>(Err(ApiError::new(ErrorCode::InternalError, format!("server failed: {e}")).into())),
    }
}
