//! Experiment harness: run directories, evaluation reports, the ablation
//! table, gradient checks and SVG return curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mrdg::checkpoint::{capture, restore, Checkpoint};
use mrdg::config::RunConfig;
use mrdg::gradcheck::{check_all, PathReport};
use mrdg::learner::{evaluate_roster, pooled, PartnerEval, Trainer};
use mrdg::metrics::{mean_std, CsvMetrics, METRICS_HEADER};
use mrdg::substrates::ScriptedKind;
use rayon::prelude::*;
use serde::Serialize;

/// Environment variable naming the default parent of run directories.
pub const OUTPUT_ROOT_ENV: &str = "MRDG_OUTPUT_ROOT";

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).map_err(anyhow::Error::new)?;
    if let Some(s) = ov.seed {
        cfg.run.seed = s;
        cfg.ablation.seeds = vec![s];
    }
    if let Some(e) = ov.episodes {
        cfg.run.episodes = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `--out`, else `$MRDG_OUTPUT_ROOT/<config stem>-seed<seed>`, else the
/// config's own `run.output_dir`.
pub fn resolve_out_dir(cfg: &RunConfig, config_path: &Path, ov: &Overrides) -> PathBuf {
    if let Some(o) = &ov.out {
        return o.clone();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => {
            let stem = config_path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
            PathBuf::from(root).join(format!("{stem}-seed{}", cfg.run.seed))
        }
        None => PathBuf::from(&cfg.run.output_dir),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PartnerSummary {
    pub partner: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
    pub steps: usize,
    pub reinit_count: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub eval: Vec<PartnerSummary>,
}

fn partner_summaries(evals: &[PartnerEval]) -> Vec<PartnerSummary> {
    evals
        .iter()
        .map(|e| PartnerSummary {
            partner: e.partner.to_string(),
            mean: e.mean,
            std: e.std,
        })
        .collect()
}

/// Trains one run into a fresh directory holding `config.toml`,
/// `metrics.csv`, `checkpoints/initial.ckpt`, `checkpoints/final.ckpt` (when
/// at least one episode ran) and `summary.json`.
pub fn train_run(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    if out.exists() {
        bail!("run directory {} already exists; refusing to overwrite", out.display());
    }
    let mut trainer = Trainer::new(cfg)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    capture(&trainer).write(&ckpt_dir.join("initial.ckpt"))?;
    let mut metrics = CsvMetrics::create(&out.join("metrics.csv"))?;
    trainer.run(cfg.run.episodes, &mut metrics)?;
    if cfg.run.episodes > 0 {
        capture(&trainer).write(&ckpt_dir.join("final.ckpt"))?;
    }
    let evals = trainer.evaluate()?;
    let (mean, std) = pooled(&evals);
    let summary = RunSummary {
        config_hash: cfg.hash(),
        seed: cfg.run.seed,
        episodes: trainer.episode(),
        steps: trainer.steps(),
        reinit_count: trainer.agent.reinit_count(),
        eval_return_mean: mean,
        eval_return_std: std,
        eval: partner_summaries(&evals),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

pub fn cmd_train(config_path: &Path, ov: &Overrides) -> Result<PathBuf> {
    let cfg = load_config(config_path, ov)?;
    let out = resolve_out_dir(&cfg, config_path, ov);
    train_run(&cfg, &out)?;
    Ok(out)
}

/// Evaluates a checkpoint against each roster entry. Prints the report and,
/// when `out` is given, writes it there as CSV.
pub fn cmd_eval(checkpoint: &Path, roster: &[String], episodes: usize, seed: Option<u64>, out: Option<&Path>) -> Result<String> {
    if roster.is_empty() {
        bail!("the partner roster is empty");
    }
    let ckpt = Checkpoint::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let (cfg, agent, _pool) = restore(&ckpt)?;
    let spec = cfg.substrate_spec(&cfg.substrate.game)?;
    let kinds = roster
        .iter()
        .map(|s| {
            let k: ScriptedKind = s.parse()?;
            k.validate(spec.actions())?;
            Ok(k)
        })
        .collect::<mrdg::Result<Vec<_>>>()?;
    let evals = evaluate_roster(&agent, &spec, &kinds, episodes, seed.unwrap_or(cfg.run.seed))?;
    let mut report = String::from("partner,episodes,mean_return,std_return,mean_reward_per_step\n");
    for e in &evals {
        writeln!(
            report,
            "{},{},{},{},{}",
            csv_field(&e.partner.to_string()),
            episodes,
            e.mean,
            e.std,
            e.mean / spec.episode_length as f64
        )?;
    }
    if let Some(path) = out {
        fs::write(path, &report)?;
    }
    Ok(report)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const VARIANTS: [(&str, &str); 5] = [
    ("MRDG", "mrdg"),
    ("w/o(DPP)", "no-dpp"),
    ("w/o(PE)", "no-pe"),
    ("w/o(HN)", "no-hn"),
    ("w/o(VA)", "no-va"),
];

/// Config of one ablation variant: the base config with exactly one module
/// switched off (none for the full method).
pub fn variant_config(base: &RunConfig, variant: usize, seed: u64) -> RunConfig {
    let mut c = base.clone();
    c.ablation.no_dpp = variant == 1;
    c.ablation.no_pe = variant == 2;
    c.ablation.no_hn = variant == 3;
    c.ablation.no_va = variant == 4;
    c.run.seed = seed;
    c
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    /// Per variant (in `VARIANTS` order), the held-out mean return per seed.
    pub returns: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl AblationResult {
    pub fn mean_std(&self, variant: usize) -> (f64, f64) {
        sample_mean_std(&self.returns[variant])
    }
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn sample_mean_std(v: &[f64]) -> (f64, f64) {
    let (mean, pop) = mean_std(v);
    let n = v.len() as f64;
    let std = if v.len() > 1 { (pop * pop * n / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

/// Standard error of the difference of two per-seed means,
/// `sqrt(s_a^2 / n_a + s_b^2 / n_b)` with sample standard deviations.
pub fn pooled_standard_error(a: &[f64], b: &[f64]) -> f64 {
    let (_, sa) = sample_mean_std(a);
    let (_, sb) = sample_mean_std(b);
    (sa * sa / a.len() as f64 + sb * sb / b.len() as f64).sqrt()
}

/// Runs every variant for every seed (in parallel) and writes
/// `<out>/<variant>/seed-<s>/`, `table.csv`, `table.txt` and `returns.csv`.
pub fn run_ablation(base: &RunConfig, out: &Path) -> Result<AblationResult> {
    if out.exists() {
        bail!("ablation directory {} already exists; refusing to overwrite", out.display());
    }
    fs::create_dir_all(out)?;
    let seeds = base.ablation.seeds.clone();
    if seeds.is_empty() {
        bail!("ablation.seeds is empty");
    }
    let jobs: Vec<(usize, u64)> = (0..VARIANTS.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let cfg = variant_config(base, v, s);
            let dir = out.join(VARIANTS[v].1).join(format!("seed-{s}"));
            Ok(train_run(&cfg, &dir)?.eval_return_mean)
        })
        .collect();
    let mut returns = vec![Vec::with_capacity(seeds.len()); VARIANTS.len()];
    let mut long = String::from("variant,seed,eval_return_mean\n");
    for ((v, s), r) in jobs.iter().zip(results) {
        let r = r?;
        returns[*v].push(r);
        writeln!(long, "{},{},{}", VARIANTS[*v].0, s, r)?;
    }
    let result = AblationResult { returns, seeds };
    let names: Vec<&str> = VARIANTS.iter().map(|v| v.0).collect();
    let cells: Vec<String> = (0..VARIANTS.len())
        .map(|v| {
            let (m, s) = result.mean_std(v);
            format!("{m:.3} ± {s:.3}")
        })
        .collect();
    fs::write(out.join("table.csv"), format!("{}\n{}\n", names.join(","), cells.join(",")))?;
    let mut txt = String::new();
    for n in &names {
        write!(txt, "{n:>18}")?;
    }
    txt.push('\n');
    for c in &cells {
        write!(txt, "{c:>18}")?;
    }
    txt.push('\n');
    fs::write(out.join("table.txt"), txt)?;
    fs::write(out.join("returns.csv"), long)?;
    Ok(result)
}

pub fn cmd_ablate(config_path: &Path, ov: &Overrides) -> Result<(PathBuf, AblationResult)> {
    let cfg = load_config(config_path, ov)?;
    let out = resolve_out_dir(&cfg, config_path, ov);
    let res = run_ablation(&cfg, &out)?;
    Ok((out, res))
}

/// Runs the finite-difference checks; returns the printed report and
/// whether every path passed.
pub fn cmd_gradcheck(seed: u64, trials: usize) -> Result<(String, Vec<PathReport>)> {
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let reports = check_all(seed, trials)?;
    let mut text = String::new();
    for r in &reports {
        writeln!(
            text,
            "{:<20} trials={:<5} redraws={:<5} worst_relative_error={:.3e} {}",
            r.path,
            r.trials,
            r.redraws,
            r.worst_error,
            if r.passed() { "PASS" } else { "FAIL" }
        )?;
    }
    Ok((text, reports))
}

/// `(episode, eval_return_mean)` pairs of a metrics file.
pub fn read_eval_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        bail!("{}: unexpected metrics header", path.display());
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Ok((f[0].parse()?, f[3].parse()?))
        })
        .collect()
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders evaluation-return curves as a standalone SVG line chart.
pub fn render_svg(series: &[(String, Vec<(f64, f64)>)], title: &str) -> String {
    let title = xml_escape(title);
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">episode</text>\n\
         <text x=\"{pad}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y0:.2}</text>\n\
         <text x=\"{pad}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y1:.2}</text>\n",
        w / 2.0,
        h - pad,
        w - pad,
        h - pad,
        h - pad,
        w / 2.0,
        h - 12.0,
        h - pad,
        pad
    );
    for (i, (name, s)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        let points: Vec<String> = s
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(svg, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", points.join(" "));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            w - pad - 120.0,
            pad + 16.0 * i as f64,
            xml_escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn cmd_plot(metrics: &[PathBuf], out: &Path, title: &str) -> Result<()> {
    if metrics.is_empty() {
        bail!("no metrics files given");
    }
    let series = metrics
        .iter()
        .map(|p| {
            let name = p
                .parent()
                .and_then(|d| d.file_name())
                .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            Ok((name, read_eval_curve(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    fs::write(out, render_svg(&series, title))?;
    Ok(())
}
