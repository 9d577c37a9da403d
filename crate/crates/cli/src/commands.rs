use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mirrorscan::attention::load_attention;
use mirrorscan::camera::{SceneModel, SimOptions};
use mirrorscan::controller::{ControllerServer, ServerOptions};
use mirrorscan::cube_io::{read_cube, write_cube, DataType};
use mirrorscan::eval::{fit_centroids, mean_iou, pixel_accuracy, total_patches, SegMask, SegMetrics};
use mirrorscan::geometry::{objective_from_xy, tangent_coords, xy_from_objective};
use mirrorscan::pipeline::{
    capture_from_cube, evaluate_full, simulate_capture, AdaptiveCapture, AttentionSource, SimulatedCapture,
};
use mirrorscan::planner::{budget, DataBudget, ScanPlan};
use mirrorscan::pnm::write_pgm;
use mirrorscan::synth::{checkerboard, labeled_scene, quadrant_texture};
use mirrorscan::{PatchRef, UnitVector3, XYPosition};
use serde::{Deserialize, Serialize};

use crate::config::{usage, CaptureMode, ExperimentConfig, Scene};
use crate::{GeomArgs, ServeArgs, SynthArgs, SynthKind};

/// Files written by one run, recorded in its manifest.
struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        self.files.push(p);
        Ok(())
    }

    fn cube(&mut self, name: &str, cube: &mirrorscan::SpectralCube) -> Result<()> {
        let hdr = write_cube(cube, self.path(name), DataType::F32)?;
        self.files.push(hdr.with_extension("raw"));
        self.files.push(hdr);
        Ok(())
    }

    fn pgm(&mut self, name: &str, img: &mirrorscan::pnm::GrayImage) -> Result<()> {
        let p = self.path(name);
        write_pgm(&p, img)?;
        self.files.push(p);
        Ok(())
    }

    fn manifest(mut self, command: &str, config: &impl Serialize) -> Result<()> {
        #[derive(Serialize)]
        struct Entry {
            path: String,
            bytes: u64,
        }
        #[derive(Serialize)]
        struct Manifest<'a, C> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            config: &'a C,
            outputs: Vec<Entry>,
        }
        self.files.sort();
        let outputs = self
            .files
            .iter()
            .map(|p| {
                Ok(Entry {
                    path: p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().replace('\\', "/"),
                    bytes: fs::metadata(p)?.len(),
                })
            })
            .collect::<io::Result<Vec<_>>>()?;
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            outputs,
        };
        let p = self.path(&format!("manifest-{command}.json"));
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }
}

fn attention_source(ext: &Option<mirrorscan::attention::AttentionMap>) -> AttentionSource<'_> {
    ext.as_ref().map_or(AttentionSource::Sobel, AttentionSource::External)
}

fn simulate(cfg: &ExperimentConfig, scene: &Scene) -> Result<SimulatedCapture> {
    let cam = cfg.camera(scene.cube.bands())?;
    let model = SceneModel::matched(scene.cube.clone(), cfg.scene.distance_m, &cam)?;
    let ext = cfg.external_attention()?;
    let sim = SimOptions {
        induce_rotation: true,
        noise_sigma: cfg.noise_sigma,
        seed: cfg.seed,
    };
    Ok(simulate_capture(
        &model,
        &cfg.adaptive(),
        &cam,
        &cfg.mirror(),
        &cfg.plan_options(),
        &sim,
        attention_source(&ext),
    )?)
}

#[derive(Serialize)]
struct PlanSummary {
    lowres: DataBudget,
    patches: DataBudget,
    total: DataBudget,
    warnings: Vec<String>,
}

fn write_plans(out: &mut Outputs, low: &ScanPlan, patches: Option<&ScanPlan>, cfg: &ExperimentConfig, bands: usize) -> Result<PlanSummary> {
    let cam = cfg.camera(bands)?;
    out.text("lowres.plan", &low.to_text())?;
    let lb = budget(low, &cam);
    let pb = match patches {
        Some(p) => {
            out.text("patches.plan", &p.to_text())?;
            budget(p, &cam)
        }
        None => DataBudget::default(),
    };
    let warnings = low
        .warnings
        .iter()
        .chain(patches.iter().flat_map(|p| &p.warnings))
        .cloned()
        .collect();
    let summary = PlanSummary {
        lowres: lb,
        patches: pb,
        total: lb + pb,
        warnings,
    };
    out.text("budget.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(summary)
}

/// Low-res sweep plan plus the wandering-patch sweeps it leads to.
pub fn plan(cfg: &ExperimentConfig) -> Result<()> {
    let scene = cfg.load_scene()?;
    let sim = simulate(cfg, &scene)?;
    let mut out = Outputs::create(&cfg.out_dir)?;
    let s = write_plans(&mut out, &sim.lowres_plan, sim.patch_plan.as_ref(), cfg, scene.cube.bands())?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "low-res: {} frames in {} chunks; patches: {} frames in {} chunks; total {} ms",
        s.lowres.frames,
        sim.lowres_plan.chunks.len(),
        s.patches.frames,
        sim.patch_plan.as_ref().map_or(0, |p| p.chunks.len()),
        s.total.capture_time_ms
    );
    out.manifest("plan", cfg)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatchEntry {
    pub rank: usize,
    #[serde(flatten)]
    pub rect: PatchRef,
    pub file: String,
    /// Fraction of patch pixels actually observed.
    pub coverage: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatchIndex {
    pub factor: usize,
    pub patch_size: usize,
    pub full_width: usize,
    pub full_height: usize,
    pub patches: Vec<PatchEntry>,
}

pub fn capture(cfg: &ExperimentConfig) -> Result<()> {
    let scene = cfg.load_scene()?;
    let acfg = cfg.adaptive();
    let mut out = Outputs::create(&cfg.out_dir)?;
    let (cap, coverage) = match cfg.mode {
        CaptureMode::Desk => {
            let ext = cfg.external_attention()?;
            let cap = capture_from_cube(&scene.cube, &acfg, attention_source(&ext))?;
            let n = cap.patches.len();
            (cap, vec![1.0; n])
        }
        CaptureMode::Simulate => {
            let sim = simulate(cfg, &scene)?;
            write_plans(&mut out, &sim.lowres_plan, sim.patch_plan.as_ref(), cfg, scene.cube.bands())?;
            let coverage = sim
                .patch_valid
                .iter()
                .map(|v| v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64)
                .collect();
            (sim.capture, coverage)
        }
    };
    out.cube("lowres", &cap.lowres)?;
    out.pgm("attention.pgm", &cap.attention.to_pgm())?;
    fs::create_dir_all(out.path("patches"))?;
    let mut entries = Vec::with_capacity(cap.patches.len());
    for (i, ((rect, cube), cov)) in cap.patches.iter().zip(coverage).enumerate() {
        let stem = format!("patches/patch_{i:03}");
        out.cube(&stem, cube)?;
        entries.push(PatchEntry {
            rank: i,
            rect: *rect,
            file: format!("{stem}.hdr"),
            coverage: cov,
        });
    }
    let index = PatchIndex {
        factor: acfg.factor,
        patch_size: acfg.patch_size,
        full_width: cap.full_width,
        full_height: cap.full_height,
        patches: entries,
    };
    out.text("patches.json", &(serde_json::to_string_pretty(&index)? + "\n"))?;

    let set = cap.patch_set(&acfg)?;
    let mut jsonl = Vec::new();
    set.write_jsonl(&mut jsonl)?;
    out.text("patchset.jsonl", std::str::from_utf8(&jsonl).expect("json is utf-8"))?;

    println!(
        "captured {}x{} low-res + {} patches ({:.1}% of full-resolution pixels)",
        cap.lowres.width(),
        cap.lowres.height(),
        cap.patches.len(),
        100.0 * cap.pixel_count() as f64 / (cap.full_width * cap.full_height) as f64
    );
    out.manifest("capture", cfg)
}

fn load_capture(dir: &Path) -> Result<(AdaptiveCapture, PatchIndex)> {
    let idx_path = dir.join("patches.json");
    let text = fs::read_to_string(&idx_path).with_context(|| format!("reading {}", idx_path.display()))?;
    let index: PatchIndex = serde_json::from_str(&text).with_context(|| format!("parsing {}", idx_path.display()))?;
    let lowres = read_cube(dir.join("lowres.hdr"))?;
    let attention = load_attention(dir.join("attention.pgm"))?;
    let patches = index
        .patches
        .iter()
        .map(|e| Ok((e.rect, read_cube(dir.join(&e.file))?)))
        .collect::<Result<Vec<_>>>()?;
    let cap = AdaptiveCapture {
        lowres,
        attention,
        patches,
        full_width: index.full_width,
        full_height: index.full_height,
    };
    Ok((cap, index))
}

/// Baseline and adaptive segmentation scores for an existing capture.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let scene = cfg.load_scene()?;
    let gt = scene
        .labels
        .as_ref()
        .ok_or_else(|| usage("evaluate needs ground-truth labels (scene.labels or --labels)"))?;
    let nc = scene.classes;
    let (cap, index) = load_capture(&cfg.out_dir)?;
    if (cap.full_width, cap.full_height) != (scene.cube.width(), scene.cube.height()) {
        return Err(mirrorscan::Error::DimMismatch(format!(
            "capture is of a {}x{} scene, configured scene is {}x{}",
            cap.full_width,
            cap.full_height,
            scene.cube.width(),
            scene.cube.height()
        ))
        .into());
    }
    let model = fit_centroids(&scene.cube, &gt.labels, nc)?;
    let ps = index.patch_size;
    let mut out = Outputs::create(&cfg.out_dir)?;
    fs::create_dir_all(out.path("pred"))?;
    out.pgm("pred/ground_truth.pgm", &gt.to_pgm(nc))?;

    let mut rows = vec![SegMetrics::CSV_HEADER.to_string()];
    let low_pred = model.classify(&cap.lowres)?.upsample(index.factor);
    let low = SegMetrics {
        mean_iou: mean_iou(&low_pred, gt, nc)?,
        pixel_accuracy: pixel_accuracy(&low_pred, gt)?,
        total_patches: total_patches(cap.lowres.width().max(cap.lowres.height()), ps, 0)?,
        captured_fraction: (cap.lowres.width() * cap.lowres.height()) as f64 / (cap.full_width * cap.full_height) as f64,
    };
    rows.push(low.csv_row("baseline-low", 0));
    out.pgm("pred/baseline_low.pgm", &low_pred.to_pgm(nc))?;

    let high = evaluate_full(&scene.cube, &model, gt, nc, ps)?;
    rows.push(high.csv_row("baseline-high", 0));
    out.pgm("pred/baseline_high.pgm", &model.classify(&scene.cube)?.to_pgm(nc))?;

    for &k in &cfg.k_list {
        if k > cap.patches.len() {
            bail!(usage(format!("k = {k} but the capture holds only {} patches", cap.patches.len())));
        }
        let (pred, m) = cap.truncated(k).evaluate(&model, gt, nc)?;
        rows.push(m.csv_row("adaptive", k));
        out.pgm(&format!("pred/adaptive_k{k}.pgm"), &pred.to_pgm(nc))?;
    }
    let csv = rows.join("\n") + "\n";
    out.text("metrics.csv", &csv)?;
    print!("{csv}");
    out.manifest("evaluate", cfg)
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let server = ControllerServer::bind((args.bind.as_str(), args.port), ServerOptions { realtime: args.realtime })
        .with_context(|| format!("binding {}:{}", args.bind, args.port))?;
    println!("listening on {}", server.local_addr()?);
    io::stdout().flush()?;
    server.serve()?;
    Ok(())
}

fn parse_triplet(s: &str, n: usize) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| usage(format!("bad number in {s:?}: {e}")))?;
    if v.len() != n {
        return Err(usage(format!("expected {n} comma-separated values, got {s:?}")));
    }
    Ok(v)
}

/// Prints objective direction, mirror XY and tangent coordinates as CSV.
pub fn geom(args: &GeomArgs) -> Result<()> {
    let spec = mirrorscan::MirrorSpec {
        swap_axes: args.swap_axes,
        ..Default::default()
    };
    let inputs: Vec<String> = if args.values.is_empty() {
        io::stdin()
            .lock()
            .lines()
            .filter_map(|l| l.map(|l| l.trim().to_string()).ok())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    } else {
        args.values.clone()
    };
    let mut stdout = io::stdout().lock();
    writeln!(stdout, "ox,oy,oz,x,y,u,v")?;
    for s in &inputs {
        let (o, xy) = if args.xy {
            let v = parse_triplet(s, 2)?;
            let xy = XYPosition::new(v[0], v[1]).map_err(|e| usage(e.to_string()))?;
            (objective_from_xy(&xy, &spec), xy)
        } else {
            let v = parse_triplet(s, 3)?;
            let o = UnitVector3::normalize(v[0], v[1], v[2]).map_err(|e| usage(e.to_string()))?;
            (o, xy_from_objective(&o, &spec).map_err(|e| usage(e.to_string()))?)
        };
        let (u, v) = tangent_coords(&o).unwrap_or((f64::NAN, f64::NAN));
        writeln!(
            stdout,
            "{:.12},{:.12},{:.12},{:.12},{:.12},{:.12},{:.12}",
            // + 0.0 folds negative zero
            o.x() + 0.0,
            o.y() + 0.0,
            o.z() + 0.0,
            xy.x() + 0.0,
            xy.y() + 0.0,
            u + 0.0,
            v + 0.0
        )?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut out = Outputs::create(&args.out_dir)?;
    match args.kind {
        SynthKind::Labeled => {
            let s = labeled_scene(args.size, args.bands, args.classes, args.regions, args.noise, args.seed)
                .map_err(|e| usage(e.to_string()))?;
            out.cube("scene", &s.cube)?;
            let mask = SegMask::new(args.size, args.size, s.labels)?;
            out.pgm("labels.pgm", &mask.to_pgm(s.classes))?;
        }
        SynthKind::Checkerboard => {
            let c = checkerboard(args.size, args.size, args.bands, args.square, args.softness)
                .map_err(|e| usage(e.to_string()))?;
            out.cube("scene", &c)?;
        }
        SynthKind::Quadrant => {
            let c = quadrant_texture(args.size, args.bands, args.quadrant, args.seed).map_err(|e| usage(e.to_string()))?;
            out.cube("scene", &c)?;
        }
    }
    println!("wrote {}", out.path("scene.hdr").display());
    out.manifest("synth", args)
}
