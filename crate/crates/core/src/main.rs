use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use attn2rnn::compiler::{
    compile_compact, compile_full, compile_low_rank, compile_lstm_attention, compile_lstm_attention_standard, compile_lstm_gated_rnn, compile_side, verify_equivalence,
    ConstructionReport, DEFAULT_RANK_TOL,
};
use attn2rnn::models::{load_checkpoint, save_checkpoint, to_json_17, Checkpoint, Model};
use attn2rnn::numerics::Rng;
use attn2rnn::runner::{self, AnalysisConfig, AnalysisSummary, ExperimentConfig, ReportInput, SweepSpec};
use attn2rnn::tasks::{gen_teacher_student, TeacherStudentSpec};
use attn2rnn::{Error, Result};

#[derive(Parser)]
#[command(name = "attn2rnn", version, about = "Compile linear attention into gated RNNs, train, and analyze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Target {
    Full,
    Compact,
    LowRank,
    Side,
    Lstm,
    LstmStandard,
}

#[derive(Subcommand)]
enum Command {
    /// Compile an attention (or gated RNN) checkpoint into another architecture.
    Compile {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        to: Target,
        #[arg(long)]
        out: PathBuf,
        /// Verification data, e.g. `T=32,nseq=8,seed=0`.
        #[arg(long)]
        verify: Option<String>,
        /// Where the construction report goes; defaults next to `--out`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Scale for the standard-mode LSTM construction.
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Largest accepted max-abs deviation when verifying; the standard-mode
        /// LSTM defaults to a relative deviation of `eps`.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compare two checkpoints on shared random sequences.
    Verify {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 32)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        nseq: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from a JSON config or a named preset.
    Train {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Teacher-identification analyses of a trained checkpoint.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a sweep spec; writes a CSV and a JSON table.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize run records and construction reports.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Outcome of a verb: whether every gate passed.
struct Gates(Vec<(String, bool)>);

impl Gates {
    fn new() -> Self {
        Gates(Vec::new())
    }
    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.0.push((name.into(), ok));
    }
    fn passed(&self) -> bool {
        self.0.iter().all(|(_, ok)| *ok)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_json_17(value)?)?;
    Ok(())
}

fn parse_verify(spec: &str) -> Result<(usize, usize, u64)> {
    let (mut t, mut n, mut seed) = (32, 8, 0);
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Error::Invalid(format!("expected key=value in --verify, got {part:?}")))?;
        let bad = |_| Error::Invalid(format!("bad value in --verify: {part:?}"));
        match k.trim() {
            "T" | "steps" => t = v.trim().parse().map_err(bad)?,
            "nseq" => n = v.trim().parse().map_err(bad)?,
            "seed" => seed = v.trim().parse().map_err(bad)?,
            other => return Err(Error::Invalid(format!("unknown --verify key {other:?}"))),
        }
    }
    Ok((t, n, seed))
}

fn compile_model(source: &Model, to: Target, eps: f64) -> Result<Model> {
    let wrong = || Err(Error::Invalid(format!("cannot compile {} into {to:?}", source.arch())));
    Ok(match (source, to) {
        (Model::Attention(p), Target::Full) => Model::Gated(compile_full(p)),
        (Model::Attention(p), Target::Compact) => Model::Gated(compile_compact(p)?),
        (Model::Attention(p), Target::LowRank) => Model::Gated(compile_low_rank(p, DEFAULT_RANK_TOL)?),
        (Model::Attention(p), Target::Side) => Model::SideGated(compile_side(p)),
        (Model::Attention(p), Target::Lstm) => Model::Lstm(compile_lstm_attention(p)),
        (Model::Attention(p), Target::LstmStandard) => Model::Lstm(compile_lstm_attention_standard(p, eps)?),
        (Model::Gated(p), Target::Lstm) => Model::Lstm(compile_lstm_gated_rnn(p)?),
        _ => return wrong(),
    })
}

fn gate_construction(gates: &mut Gates, report: &ConstructionReport, tol: f64) {
    println!("max abs deviation {:e} (tolerance {tol:e})", report.max_abs_deviation);
    gates.check("construction deviation", report.max_abs_deviation <= tol);
}

fn analysis_gates(gates: &mut Gates, a: &AnalysisSummary, cfg: &AnalysisConfig) {
    if let Some(p) = &a.prune {
        gates.check("prune deviation", p.deviation <= cfg.max_prune_deviation);
    }
}

fn run(cli: Cli) -> Result<Gates> {
    let mut gates = Gates::new();
    match cli.command {
        Command::Compile {
            from,
            to,
            out,
            verify,
            report,
            eps,
            tol,
        } => {
            let ckpt = load_checkpoint(&from)?;
            let target = compile_model(&ckpt.model, to, eps)?;
            save_checkpoint(&out, &Checkpoint::new(target.clone(), ckpt.metadata.seed))?;
            println!("wrote {}", out.display());
            if let Some(v) = verify {
                let (t, n, seed) = parse_verify(&v)?;
                let r = verify_equivalence(&ckpt.model, &target, ckpt.model.d_data(), t, n, seed)?;
                let path = report.unwrap_or_else(|| out.with_extension("report.json"));
                write_json(&path, &r)?;
                println!("wrote {}", path.display());
                match (to, tol) {
                    (Target::LstmStandard, None) => {
                        println!("max rel deviation {:e} (tolerance {eps:e})", r.max_rel_deviation);
                        gates.check("construction deviation", r.max_rel_deviation <= eps);
                    }
                    (_, tol) => gate_construction(&mut gates, &r, tol.unwrap_or(1e-9)),
                }
            }
        }
        Command::Verify {
            a,
            b,
            steps,
            nseq,
            seed,
            tol,
            out,
        } => {
            let (a, b) = (load_checkpoint(&a)?.model, load_checkpoint(&b)?.model);
            let r = verify_equivalence(&a, &b, a.d_data(), steps, nseq, seed)?;
            match out {
                Some(p) => write_json(&p, &r)?,
                None => println!("{}", serde_json::to_string_pretty(&r)?),
            }
            gate_construction(&mut gates, &r, tol);
        }
        Command::Train { config, preset, seed } => {
            let mut c = match (config, preset) {
                (Some(p), _) => ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?,
                (None, Some(name)) => runner::preset(&name)?,
                (None, None) => unreachable!("clap requires one"),
            };
            if let Some(s) = seed {
                c.seed = s;
            }
            let r = runner::run_experiment(&c, &runner::runs_root())?;
            println!("run directory {}", r.run_dir.display());
            println!("final train loss {:e}, validation loss {:e}", r.final_train_loss, r.final_val_loss);
            if let Some(d) = r.delta_loss {
                println!("delta loss vs optimal GD {d:e}");
            }
            if let Some(e) = &r.diverged {
                eprintln!("training diverged: {e}");
            }
            gates.check("no divergence", r.diverged.is_none());
            analysis_gates(&mut gates, &r.analysis, &c.analysis);
        }
        Command::Analyze {
            ckpt,
            teacher,
            out,
            steps,
            seed,
        } => {
            let model = load_checkpoint(&ckpt)?.model;
            let Model::Attention(t) = load_checkpoint(&teacher)?.model else {
                return Err(Error::Invalid("the teacher checkpoint must hold linear attention".into()));
            };
            let cfg = AnalysisConfig::default();
            let mut spec = TeacherStudentSpec::new(t.d(), 0);
            spec.seq_len = steps;
            let batch = gen_teacher_student(&spec, &t, &mut Rng::new(seed).substream("analyze"), cfg.probe_seqs);
            let mut summary = AnalysisSummary::default();
            runner::analyze_against_teacher(&model, &t, &batch, &cfg, &mut summary)?;
            write_json(&out, &summary)?;
            println!("wrote {}", out.display());
            analysis_gates(&mut gates, &summary, &cfg);
        }
        Command::Sweep { spec, out, seed } => {
            let mut s: SweepSpec = serde_json::from_str(&std::fs::read_to_string(&spec)?)?;
            if let Some(seed) = seed {
                s.base.seed = seed;
            }
            let table = runner::run_sweep(&s, &runner::runs_root())?;
            let csv = out.unwrap_or_else(|| spec.with_extension("csv"));
            std::fs::write(&csv, table.to_csv())?;
            write_json(&csv.with_extension("json"), &table)?;
            print!("{}", table.to_csv());
            gates.check("finite losses", table.rows.iter().all(|r| r.final_train_loss.is_finite()));
        }
        Command::Report { inputs, out } => {
            let records = inputs
                .iter()
                .map(|p| -> Result<ReportInput> { Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?) })
                .collect::<Result<Vec<_>>>()?;
            let summary = runner::report(&records)?;
            write_json(&out, &summary)?;
            let md = out.with_extension("md");
            std::fs::write(&md, &summary.markdown)?;
            print!("{}", summary.markdown);
        }
    }
    Ok(gates)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(g) if g.passed() => ExitCode::SUCCESS,
        Ok(g) => {
            for (name, _) in g.0.iter().filter(|(_, ok)| !ok) {
                eprintln!("gate failed: {name}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
