use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use limper_core::construct::{
    reverify_history_a, reverify_history_b, run_construction_a, run_construction_a_from, run_construction_b,
    run_construction_b_from, sweep_lyapunov, ConstructionAOutcome, ConstructionBOutcome, PropertyCheck, SweepLength,
};
use limper_core::io::{
    bands_csv, load_potential, load_stage_file, load_stage_file_unchecked, parse_config, save_stage_file, sweep_csv,
    StageFile, StagePayload,
};
use limper_core::spectrum::{
    band_edges_exact, local_bands_detailed, spectrum_measure, DEFAULT_MAX_BANDS, EXACT_PERIOD_CAP, RESOLUTION_FLOOR,
};
use limper_core::{ConstructionConfig, Error};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "limper", version, about = "Spectra, Lyapunov exponents and staged limit-periodic constructions")]
struct Cli {
    /// Worker threads; LIMPER_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band edges of a periodic potential.
    Spectrum {
        /// Inline comma-separated period, or a file (values, recipe JSON or stage file).
        #[arg(long, allow_hyphen_values = true)]
        potential: String,
        /// Only bands meeting `a,b`.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lyapunov exponent on an energy grid.
    LyapunovSweep {
        /// Stage file whose final potential is used.
        #[arg(long, conflicts_with = "potential", required_unless_present = "potential")]
        stage: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        potential: Option<String>,
        /// `a,b,n`.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        /// Number of sites, or `period` for the exact periodic exponent.
        #[arg(long, default_value = "period")]
        length: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs construction A or B and writes one stage file per stage.
    Construct {
        #[arg(long, value_enum)]
        construction: Construction,
        #[arg(long)]
        stages: Option<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        outdir: PathBuf,
    },
    /// Re-runs every certification on a stage file.
    Verify { stage: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Construction {
    A,
    B,
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Io(_) | Error::Format(_) | Error::PeriodTooLarge { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Check(other.to_string()),
        }
    }
}

type CmdResult = Result<bool, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match std::env::var("LIMPER_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => {
                eprintln!("error: LIMPER_THREADS={v:?} is not a thread count");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        Err(_) => cli.threads,
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Spectrum { potential, window, out } => cmd_spectrum(&potential, window.as_deref(), out.as_deref()),
        Command::LyapunovSweep { stage, potential, grid, length, out } => {
            cmd_sweep(stage.as_deref(), potential.as_deref(), &grid, &length, out.as_deref())
        }
        Command::Construct { construction, stages, config, resume, outdir } => {
            cmd_construct(construction, stages, config.as_deref(), resume.as_deref(), &outdir)
        }
        Command::Verify { stage } => cmd_verify(&stage),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("failed: {msg}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}

fn parse_floats(text: &str, n: usize, what: &str) -> Result<Vec<f64>, Failure> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("{what} {text:?}: {e}")))?;
    if vals.len() != n || vals.iter().any(|v| !v.is_finite()) {
        return Err(usage(format!("{what} needs {n} finite comma-separated numbers, got {text:?}")));
    }
    Ok(vals)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_spectrum(potential: &str, window: Option<&str>, out: Option<&Path>) -> CmdResult {
    let recipe = load_potential(potential)?;
    let csv = match window {
        None if recipe.period() <= EXACT_PERIOD_CAP => {
            let bands = band_edges_exact(&recipe)?;
            eprintln!("{} bands, total length {}", bands.len(), spectrum_measure(&bands));
            bands_csv(bands.iter().enumerate().map(|(i, b)| (i as u64, b)))
        }
        w => {
            let (a, b) = match w {
                Some(w) => {
                    let v = parse_floats(w, 2, "--window")?;
                    if v[0] >= v[1] {
                        return Err(usage("--window needs a < b"));
                    }
                    (v[0], v[1])
                }
                None => {
                    let (lo, hi) = recipe.value_bounds();
                    (lo - 2.5, hi + 2.5)
                }
            };
            let local = local_bands_detailed(&recipe, (a, b), RESOLUTION_FLOOR, DEFAULT_MAX_BANDS);
            eprintln!(
                "{} bands meet [{a}, {b}]; {} resolved, {} below width {RESOLUTION_FLOOR:e}{}",
                local.band_count,
                local.resolved.len(),
                local.unresolved.len(),
                if local.truncated { " (enumeration capped)" } else { "" }
            );
            bands_csv(local.resolved.iter().map(|b| (b.index, &b.band)))
        }
    };
    emit(out, &csv)?;
    Ok(true)
}

fn cmd_sweep(stage: Option<&Path>, potential: Option<&str>, grid: &str, length: &str, out: Option<&Path>) -> CmdResult {
    let recipe = match (stage, potential) {
        (Some(p), _) => {
            load_stage_file(p)?.final_recipe().cloned().ok_or_else(|| usage("stage file holds no stages"))?
        }
        (None, Some(v)) => load_potential(v)?,
        (None, None) => return Err(usage("give --stage or --potential")),
    };
    let parts: Vec<&str> = grid.split(',').collect();
    if parts.len() != 3 {
        return Err(usage(format!("--grid needs a,b,n, got {grid:?}")));
    }
    let ab = parse_floats(&format!("{},{}", parts[0], parts[1]), 2, "--grid")?;
    let n: usize = parts[2].trim().parse().map_err(|e| usage(format!("--grid n: {e}")))?;
    if n == 0 {
        return Err(usage("--grid needs n >= 1"));
    }
    if ab[0] > ab[1] {
        return Err(usage("--grid needs a <= b"));
    }
    let length = match length {
        "period" => SweepLength::Period,
        s => match s.parse::<u64>() {
            Ok(len) if len > 0 => SweepLength::Sites(len),
            _ => return Err(usage(format!("--length must be a positive integer or `period`, got {s:?}"))),
        },
    };
    emit(out, &sweep_csv(&sweep_lyapunov(&recipe, ab[0], ab[1], n, length)))?;
    Ok(true)
}

fn stage_path(outdir: &Path, tag: char, k: u32) -> PathBuf {
    outdir.join(format!("stage_{}_{k}.json", tag.to_ascii_lowercase()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_construct(
    which: Construction,
    stages: Option<u32>,
    config: Option<&Path>,
    resume: Option<&Path>,
    outdir: &Path,
) -> CmdResult {
    let from_file = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Some(parse_config(&text)?)
        }
        None => None,
    };
    let resumed = resume.map(load_stage_file).transpose()?;
    let mut cfg = match (&resumed, from_file) {
        (Some(r), Some(c)) => {
            let mut echo = r.config.clone();
            echo.stages = c.stages;
            if echo != c {
                return Err(usage("--config differs from the configuration stored in the resumed stage file"));
            }
            c
        }
        (Some(r), None) => r.config.clone(),
        (None, Some(c)) => c,
        (None, None) => ConstructionConfig::default(),
    };
    if let Some(k) = stages {
        cfg.stages = k;
    }
    cfg.validate()?;
    std::fs::create_dir_all(outdir).map_err(|e| usage(format!("{}: {e}", outdir.display())))?;
    match which {
        Construction::A => construct_a(cfg, resumed, outdir),
        Construction::B => construct_b(cfg, resumed, outdir),
    }
}

fn construct_a(cfg: ConstructionConfig, resumed: Option<StageFile>, outdir: &Path) -> CmdResult {
    let mut history = match resumed.map(|f| f.payload) {
        Some(StagePayload::A { history }) => history,
        Some(StagePayload::B { .. }) => return Err(usage("resumed stage file belongs to construction B")),
        None => run_construction_a(&ConstructionConfig { stages: 0, ..cfg.clone() })?.stages,
    };
    if history.is_empty() {
        return Err(usage("resumed stage file holds no stages"));
    }
    save_stage_file(&stage_path(outdir, 'A', 0), &StageFile::new_a(cfg.clone(), history[..1].to_vec()))?;
    let mut outcome: Option<ConstructionAOutcome> = None;
    let start = history.len() as u32;
    for target in start..=cfg.stages {
        eprintln!("construction A: building stage {target}");
        let o = run_construction_a_from(&ConstructionConfig { stages: target, ..cfg.clone() }, history)?;
        history = o.stages.clone();
        let last = history.last().expect("nonempty").k;
        save_stage_file(&stage_path(outdir, 'A', last), &StageFile::new_a(cfg.clone(), history.clone()))?;
        let stop = o.failure.is_some();
        outcome = Some(o);
        if stop {
            break;
        }
    }
    let outcome = match outcome {
        Some(o) => o,
        None => run_construction_a_from(&cfg, history)?,
    };
    let text = summary_a(&outcome, &cfg);
    print!("{text}");
    write(&outdir.join("summary_a.txt"), &text)?;
    Ok(outcome.all_ok())
}

fn construct_b(cfg: ConstructionConfig, resumed: Option<StageFile>, outdir: &Path) -> CmdResult {
    let mut history = match resumed.map(|f| f.payload) {
        Some(StagePayload::B { history, .. }) => history,
        Some(StagePayload::A { .. }) => return Err(usage("resumed stage file belongs to construction A")),
        None => run_construction_b(&ConstructionConfig { stages: 0, ..cfg.clone() })?.stages,
    };
    if history.is_empty() {
        return Err(usage("resumed stage file holds no stages"));
    }
    let mut outcome: Option<ConstructionBOutcome> = None;
    let start = history.len() as u32;
    for target in start..=cfg.stages {
        eprintln!("construction B: building stage {target}");
        let o = run_construction_b_from(&ConstructionConfig { stages: target, ..cfg.clone() }, history)?;
        history = o.stages.clone();
        let last = history.last().expect("nonempty").k;
        save_stage_file(&stage_path(outdir, 'B', last), &StageFile::new_b(cfg.clone(), history.clone(), o.unshift))?;
        let stop = o.failure.is_some();
        outcome = Some(o);
        if stop {
            break;
        }
    }
    let outcome = match outcome {
        Some(o) => o,
        None => run_construction_b_from(&cfg, history)?,
    };
    save_stage_file(
        &stage_path(outdir, 'B', 0),
        &StageFile::new_b(cfg.clone(), outcome.stages[..1].to_vec(), outcome.unshift),
    )?;
    write(&outdir.join("discontinuity.csv"), &outcome.report.sweep_csv())?;
    let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| usage(e.to_string()))?;
    write(&outdir.join("discontinuity.json"), &json)?;
    let text = summary_b(&outcome, &cfg);
    print!("{text}");
    write(&outdir.join("summary_b.txt"), &text)?;
    Ok(outcome.all_ok())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn summary_a(o: &ConstructionAOutcome, cfg: &ConstructionConfig) -> String {
    let mut s = format!("construction A, mode {}, L = {}, K = {}\n", cfg.mode, cfg.l, cfg.stages);
    for st in &o.stages {
        let r = &st.report;
        s += &format!(
            "stage {}: period {}, {} intervals, m0 {} (required {}), m {}, delta {:e}\n",
            st.k,
            st.p_k,
            st.sigma.len(),
            st.m0,
            st.m0_required,
            st.m,
            st.delta
        );
        s += &format!("  (i) sup change {:e} <= {:e}: {}\n", r.sup_change, r.sup_bound, verdict(r.sup_ok));
        if let Some(p) = &r.prefix {
            s += &format!("  (ii) prefix: {} mismatches in {} sites: {}\n", p.mismatches, p.checked, verdict(p.pass));
        }
        for e in &r.smallness {
            s += &format!(
                "  (iii) l={}: sup {:.6e} <= {:.6e} (margin {:.3e}): {}\n",
                e.l,
                e.sup,
                e.target,
                e.margin(),
                verdict(e.pass)
            );
        }
        s += &format!(
            "  (iv) {}-dense: {}; membership failures {}\n",
            r.density_eps,
            verdict(r.density_ok),
            r.membership_failures
        );
        s += &format!("  (v) nesting: {}\n", verdict(r.nesting_ok));
        if !r.trials.is_empty() {
            s += &format!("  trial residuals within bound: {}\n", verdict(r.trials_ok()));
        }
        for f in &r.band_failures {
            s += &format!("  band search failed: {f}\n");
        }
    }
    for c in &o.chains {
        s += &format!(
            "chain from {}: end {:.9}, nested {}, L at end {:.3e}\n",
            c.e0, c.e_hat, c.nested, c.growth_at_end
        );
    }
    if let Some(f) = &o.failure {
        s += &format!("stopped at stage {}: {}\n", f.stage, f.reason);
    }
    s += &format!("overall: {}\n", verdict(o.all_ok()));
    s
}

fn summary_b(o: &ConstructionBOutcome, cfg: &ConstructionConfig) -> String {
    let r = &o.report;
    let mut s = format!("construction B, mode {}, eps = {}, K = {}\n", cfg.mode, cfg.eps, cfg.stages);
    s += &format!("E0 = {:.12}, gamma = {:.12}\n", r.e0, r.gamma);
    for st in &o.stages {
        let v = &st.report;
        s += &format!("stage {}: period {}, E_k {:.12}, m0 {}, m {}, h {}\n", st.k, st.p_k, st.e_k, st.m0, st.m, st.h);
        s += &format!("  (i) lowering {:e} <= {:e}: {}\n", v.sup_change, v.sup_bound, verdict(v.sup_ok));
        s += &format!("  (ii) E_k in [{:.12}, {:.12}]: {}\n", v.global_lower, v.global_upper, verdict(v.global_ok));
        s += &format!("  (iii) L(0) {:.9} >= {:.9}: {}\n", v.l0.l0, v.l0.target, verdict(v.l0.pass));
        for e in &v.smallness {
            s += &format!("  (iv) l={}: sup {:.6e} <= {:.6e}: {}\n", e.l, e.sup, e.target, verdict(e.pass));
        }
        if let Some(h) = &v.h_choice {
            s += &format!("  Cayley-Hamilton residual {:.3e}: {}\n", h.ch_residual, verdict(h.ch_ok));
        }
    }
    for b in &r.bottom {
        s += &format!(
            "bottom band of V^{} at {:.9}: L_p {:.6e} <= {:.6e}: {}\n",
            b.k,
            b.energy,
            b.finite_l,
            b.target,
            verdict(b.pass)
        );
    }
    s += &format!(
        "telescoped change {:.9} <= 2 E0 = {:.9}: {}\n",
        r.telescope.total,
        r.telescope.bound_2e0,
        verdict(r.telescope.ok)
    );
    s += &format!("distance to V0 {:.9} <= eps: {}\n", r.unshift.distance, verdict(r.unshift.ok));
    s += &format!("L monotone below the spectrum: {}\n", verdict(r.monotone_ok));
    s += &format!("shadow of the discontinuity at 0: {}\n", verdict(r.shadow_ok));
    if let Some(f) = &o.failure {
        s += &format!("stopped at stage {}: {}\n", f.stage, f.reason);
    }
    s += &format!("overall: {}\n", verdict(o.all_ok()));
    s
}

fn print_checks(checks: &[PropertyCheck]) -> bool {
    for c in checks {
        println!(
            "stage {:>2}  {:<28} value {:>14.6e}  bound {:>14.6e}  margin {:>11.3e}  {}{}",
            c.stage,
            c.property,
            c.value,
            c.bound,
            c.margin,
            verdict(c.pass),
            if c.detail.is_empty() { String::new() } else { format!("  {}", c.detail) }
        );
    }
    checks.iter().all(|c| c.pass)
}

fn cmd_verify(path: &Path) -> CmdResult {
    let file = load_stage_file_unchecked(path)?;
    let digest_ok = file.digest_ok();
    println!("construction {}, stage {}, digest {}", file.tag(), file.stage, if digest_ok { "ok" } else { "MISMATCH" });
    let checks = match &file.payload {
        StagePayload::A { history } => reverify_history_a(history, &file.config),
        StagePayload::B { history, .. } => reverify_history_b(history, &file.config),
    };
    let ok = print_checks(&checks);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.property.as_str()).collect();
    if !failed.is_empty() {
        eprintln!("violated: {}", failed.join(", "));
    }
    Ok(ok && digest_ok)
}
