//! Command line surface over the tnat library.
//!
//! Exit codes: 0 success, 1 precondition or hypothesis violation, 2
//! certificate verification failure, 3 parse error (input files or the
//! invocation itself). Reports restate the window and seed so that window-
//! bounded observations are never mistaken for global facts, and identical
//! invocations produce byte-identical output.

use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::{fs, io};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tnat::term::safe_window;
use tnat::{
    canon, construct_h, cp_square, enumerate_j, filter_h, is_in_j, run_preset, w_cp, w_dual,
    w_inj, w_left_gen_fi, w_right_gen, w_sur, w_sym_from_inj, DualKind, FlagOutcome, Preset,
    RcaMap, RightGenKind, SetFamily, Term, TieBreak, WitnessCertificate,
};

#[derive(Parser)]
#[command(
    name = "tnat",
    version,
    about = "Exact invariants, witnesses, and hitting sets for transformations of the naturals"
)]
struct Cli {
    /// Number of initial points used for evaluation windows and certificates.
    #[arg(long, global = true, default_value_t = 10_000)]
    window: u64,
    /// Restated in every report; reserved for sampled workloads.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Verb {
    /// Evaluate a term at chosen points.
    Eval {
        /// Term file or builtin name (succ, dbl, half, pred, cst0, mix, id,
        /// colproj, colembed).
        term: String,
        /// Points to evaluate at; defaults to the first few naturals.
        points: Vec<u64>,
    },
    /// Exact-or-bounded invariants of a term.
    Invariants { term: String },
    /// Membership flags for the eight transformation classes.
    Classify { term: String },
    /// Compose terms left to right and print the canonical form.
    Compose {
        #[arg(num_args = 2.., required = true)]
        terms: Vec<String>,
    },
    /// Build a factorization witness and certify it on the window.
    Witness {
        /// One of w_inj, w_sur, w_cp, w_dual, w_sym_from_inj, w_left_gen_fi,
        /// w_right_gen, cp_square.
        name: String,
        /// Kind (for w_dual: if|fi, for w_right_gen: if|cp) followed by the
        /// term arguments.
        args: Vec<String>,
    },
    /// Hitting sets of a family file, one member per line.
    Jset {
        file: String,
        /// Drop every set meeting these ids.
        #[arg(long, value_delimiter = ',')]
        avoid: Vec<u64>,
        /// Also run the sequential construction.
        #[arg(long)]
        construct: bool,
    },
    /// Finite full-transformation monoid pipelines.
    Sandbox {
        #[command(subcommand)]
        cmd: SandboxCmd,
    },
}

#[derive(Subcommand)]
enum SandboxCmd {
    /// Validate the maximality equivalence end to end on a preset.
    Theorem1 {
        #[arg(long, value_enum)]
        preset: PresetArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    #[value(name = "sym3")]
    Sym3,
    #[value(name = "sym4")]
    Sym4,
}

enum Failure {
    /// Exit 1.
    Precondition(String),
    /// Exit 3.
    Parse(String),
}

struct Report {
    text: String,
    json: serde_json::Value,
    exit: u8,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(3);
        }
    };
    match run(&cli) {
        Ok(report) => {
            match cli.format {
                Format::Text => print!("{}", report.text),
                Format::Json => {
                    let mut envelope = report.json;
                    envelope["window"] = json!(cli.window);
                    envelope["seed"] = json!(cli.seed);
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&envelope).expect("reports serialize")
                    );
                }
            }
            ExitCode::from(report.exit)
        }
        Err(Failure::Precondition(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Parse(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn header(cli: &Cli) -> String {
    format!("window: {}\nseed: {}\n", cli.window, cli.seed)
}

fn run(cli: &Cli) -> Result<Report, Failure> {
    match &cli.verb {
        Verb::Eval { term, points } => eval_verb(cli, term, points),
        Verb::Invariants { term } => invariants_verb(cli, term),
        Verb::Classify { term } => classify_verb(cli, term),
        Verb::Compose { terms } => compose_verb(cli, terms),
        Verb::Witness { name, args } => witness_verb(cli, name, args),
        Verb::Jset {
            file,
            avoid,
            construct,
        } => jset_verb(cli, file, avoid, *construct),
        Verb::Sandbox {
            cmd: SandboxCmd::Theorem1 { preset },
        } => sandbox_verb(cli, *preset),
    }
}

fn builtin(name: &str) -> Option<Term> {
    let t = match name {
        "succ" => Term::Rca(canon::succ()),
        "dbl" => Term::Rca(canon::dbl()),
        "half" => Term::Rca(canon::half()),
        "pred" => Term::Rca(canon::pred()),
        "cst0" => Term::Rca(canon::cst0()),
        "mix" => Term::Rca(canon::mix()),
        "id" => Term::Rca(RcaMap::identity()),
        "colproj" => Term::ColProj,
        "colembed" => Term::ColEmbed,
        _ => return None,
    };
    Some(t)
}

/// Best-effort byte offset for a 1-based line and column.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            break;
        }
        offset += l.len();
    }
    (offset + column.saturating_sub(1)).min(text.len())
}

fn parse_term_text(text: &str, origin: &str) -> Result<Term, Failure> {
    serde_json::from_str::<Term>(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        Failure::Parse(format!("{origin}: parse error at byte {offset}: {e}"))
    })
}

fn load_term(spec: &str) -> Result<Term, Failure> {
    if Path::new(spec).exists() {
        let text = fs::read_to_string(spec)
            .map_err(|e| Failure::Parse(format!("{spec}: {e}")))?;
        parse_term_text(&text, spec)
    } else if let Some(t) = builtin(spec) {
        Ok(t)
    } else {
        Err(Failure::Parse(format!(
            "{spec}: no such file and not a builtin term name"
        )))
    }
}

fn term_json(t: &Term) -> serde_json::Value {
    serde_json::to_value(t).expect("terms serialize")
}

fn eval_verb(cli: &Cli, spec: &str, points: &[u64]) -> Result<Report, Failure> {
    let term = load_term(spec)?;
    let points: Vec<u64> = if points.is_empty() {
        (0..cli.window.min(16)).collect()
    } else {
        points.to_vec()
    };
    if !term.contains_lazy() {
        for &p in &points {
            let needed = p.saturating_add(1);
            let safe = safe_window(&term, needed);
            if safe < needed {
                return Err(Failure::Precondition(format!(
                    "evaluating at {p} overflows the exact range; largest safe window is {safe}"
                )));
            }
        }
    }
    let values: Vec<(u64, u64)> = points.iter().map(|&p| (p, term.eval(p))).collect();
    let mut text = header(cli);
    let _ = writeln!(text, "term: {term}");
    for (p, v) in &values {
        let _ = writeln!(text, "{p} -> {v}");
    }
    let json = json!({
        "verb": "eval",
        "term": term_json(&term),
        "values": values.iter().map(|(p, v)| json!({"n": p, "value": v})).collect::<Vec<_>>(),
    });
    Ok(Report { text, json, exit: 0 })
}

fn invariants_verb(cli: &Cli, spec: &str) -> Result<Report, Failure> {
    let term = load_term(spec)?;
    let report = term.report();
    let mut text = header(cli);
    let _ = writeln!(text, "term: {term}");
    let _ = writeln!(text, "d: {}", report.d);
    let _ = writeln!(text, "c: {}", report.c);
    let _ = writeln!(text, "k: {}", report.k);
    let _ = writeln!(text, "rank: {}", report.rank);
    match &report.image {
        Some(image) => {
            let _ = writeln!(text, "image: {image}");
        }
        None => {
            let _ = writeln!(text, "image: unknown");
        }
    }
    let _ = writeln!(
        text,
        "infinite kernel class: {}",
        report.has_infinite_kernel_class
    );
    let json = json!({
        "verb": "invariants",
        "term": term_json(&term),
        "report": serde_json::to_value(&report).expect("reports serialize"),
    });
    Ok(Report { text, json, exit: 0 })
}

fn classify_verb(cli: &Cli, spec: &str) -> Result<Report, Failure> {
    let term = load_term(spec)?;
    let flags = term.classify();
    let mut text = header(cli);
    let _ = writeln!(text, "term: {term}");
    for (flag, value) in flags.iter() {
        let _ = writeln!(text, "{flag}: {value}");
    }
    let yes: Vec<String> = flags.yes_set().iter().map(|f| f.to_string()).collect();
    let _ = writeln!(text, "yes: {}", yes.join(" "));
    let json = json!({
        "verb": "classify",
        "term": term_json(&term),
        "flags": serde_json::to_value(flags).expect("flags serialize"),
    });
    Ok(Report { text, json, exit: 0 })
}

fn compose_verb(cli: &Cli, specs: &[String]) -> Result<Report, Failure> {
    let mut terms = specs.iter().map(|s| load_term(s));
    let first = terms.next().expect("clap enforces at least two terms")?;
    let composite = terms.try_fold(first, |acc, t| Ok(Term::compose(acc, t?)))?;
    let canonical =
        serde_json::to_string(&composite).expect("terms serialize");
    let mut text = header(cli);
    let _ = writeln!(text, "term: {composite}");
    let _ = writeln!(text, "json: {canonical}");
    let json = json!({
        "verb": "compose",
        "term": term_json(&composite),
    });
    Ok(Report { text, json, exit: 0 })
}

fn witness_verb(cli: &Cli, name: &str, args: &[String]) -> Result<Report, Failure> {
    fn arity(name: &str, args: &[String], n: usize) -> Result<(), Failure> {
        if args.len() == n {
            Ok(())
        } else {
            Err(Failure::Parse(format!(
                "{name} takes {n} argument(s), got {}",
                args.len()
            )))
        }
    }
    let w = cli.window;
    let built = match name {
        "w_inj" => {
            arity(name, args, 2)?;
            w_inj(&load_term(&args[0])?, &load_term(&args[1])?, w)
        }
        "w_sur" => {
            arity(name, args, 2)?;
            w_sur(&load_term(&args[0])?, &load_term(&args[1])?, w)
        }
        "w_cp" => {
            arity(name, args, 2)?;
            w_cp(&load_term(&args[0])?, &load_term(&args[1])?, w)
        }
        "w_dual" => {
            arity(name, args, 3)?;
            let kind = match args[0].as_str() {
                "if" => DualKind::IfClass,
                "fi" => DualKind::FiClass,
                other => {
                    return Err(Failure::Parse(format!(
                        "unknown w_dual kind {other:?}; expected if or fi"
                    )))
                }
            };
            w_dual(kind, &load_term(&args[1])?, &load_term(&args[2])?, w)
        }
        "w_sym_from_inj" => {
            arity(name, args, 2)?;
            w_sym_from_inj(&load_term(&args[0])?, &load_term(&args[1])?, w)
        }
        "w_left_gen_fi" => {
            arity(name, args, 2)?;
            w_left_gen_fi(&load_term(&args[0])?, &load_term(&args[1])?, w)
        }
        "w_right_gen" => {
            arity(name, args, 3)?;
            let kind = match args[0].as_str() {
                "if" => RightGenKind::IfClass,
                "cp" => RightGenKind::Cp,
                other => {
                    return Err(Failure::Parse(format!(
                        "unknown w_right_gen kind {other:?}; expected if or cp"
                    )))
                }
            };
            w_right_gen(kind, &load_term(&args[1])?, &load_term(&args[2])?, w)
        }
        "cp_square" => {
            arity(name, args, 1)?;
            cp_square(&load_term(&args[0])?, w)
        }
        other => {
            return Err(Failure::Parse(format!(
                "unknown witness name {other:?}; expected one of w_inj, w_sur, w_cp, w_dual, \
                 w_sym_from_inj, w_left_gen_fi, w_right_gen, cp_square"
            )))
        }
    };
    let cert = built.map_err(|e| Failure::Precondition(e.to_string()))?;
    let text = render_certificate(cli, &cert);
    let json = json!({
        "verb": "witness",
        "certificate": serde_json::to_value(&cert).expect("certificates serialize"),
    });
    let exit = if cert.verified { 0 } else { 2 };
    Ok(Report { text, json, exit })
}

fn render_certificate(cli: &Cli, cert: &WitnessCertificate) -> String {
    let mut text = header(cli);
    let _ = writeln!(text, "certificate: {}", cert.name);
    let _ = writeln!(text, "equation: {}", cert.equation);
    let _ = writeln!(text, "factors:");
    for (role, term) in &cert.factors {
        let _ = writeln!(text, "  {role}: {term}");
    }
    let _ = writeln!(text, "verified: {}", cert.verified);
    match &cert.first_mismatch {
        Some(m) => {
            let _ = writeln!(
                text,
                "first mismatch: n={} left={} right={}",
                m.n, m.left, m.right
            );
        }
        None => {
            let _ = writeln!(text, "first mismatch: none");
        }
    }
    let _ = writeln!(text, "required flags:");
    for check in &cert.required_flags {
        let outcome = match &check.outcome {
            FlagOutcome::Match { asserted: false } => "match".to_string(),
            FlagOutcome::Match { asserted: true } => "match (asserted)".to_string(),
            FlagOutcome::Mismatch { actual } => format!("mismatch (actual {actual})"),
            FlagOutcome::ContradictedByWindow => "window contradicts the report".to_string(),
        };
        let _ = writeln!(
            text,
            "  {} {} expected {}: {}",
            check.role, check.flag, check.expected, outcome
        );
    }
    text
}

fn jset_verb(cli: &Cli, file: &str, avoid: &[u64], construct: bool) -> Result<Report, Failure> {
    let text_in = fs::read_to_string(file).map_err(|e: io::Error| {
        Failure::Parse(format!("{file}: {e}"))
    })?;
    let family = SetFamily::parse(&text_in)
        .map_err(|e| Failure::Parse(format!("{file}: {e}")))?;
    let sets = if avoid.is_empty() {
        enumerate_j(&family)
    } else {
        filter_h(&family, avoid)
    }
    .map_err(|e| Failure::Precondition(e.to_string()))?;
    let constructed = if construct {
        let h = construct_h(&family, TieBreak::Smallest)
            .map_err(|e| Failure::Precondition(e.to_string()))?;
        assert!(is_in_j(&h, &family), "construction must land in the family's hitting sets");
        Some(h)
    } else {
        None
    };
    let fmt_set = |s: &[u64]| {
        s.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut text = header(cli);
    let _ = writeln!(
        text,
        "family: {} members over {} elements",
        family.members().len(),
        family.universe().len()
    );
    if !avoid.is_empty() {
        let _ = writeln!(text, "avoid: {}", fmt_set(avoid));
    }
    let _ = writeln!(text, "sets: {}", sets.len());
    for s in &sets {
        let _ = writeln!(text, "{}", fmt_set(s));
    }
    if let Some(h) = &constructed {
        let _ = writeln!(text, "construction: {}", fmt_set(h));
    }
    let mut json = json!({
        "verb": "jset",
        "members": family.members(),
        "universe": family.universe(),
        "avoid": avoid,
        "sets": sets,
    });
    if let Some(h) = constructed {
        json["construction"] = json!(h);
    }
    Ok(Report { text, json, exit: 0 })
}

fn sandbox_verb(cli: &Cli, preset: PresetArg) -> Result<Report, Failure> {
    let (name, p) = match preset {
        PresetArg::Sym3 => ("sym3", Preset::Sym3),
        PresetArg::Sym4 => ("sym4", Preset::Sym4),
    };
    let report = run_preset(p).map_err(|e| Failure::Precondition(e.to_string()))?;
    let mut text = header(cli);
    let _ = writeln!(text, "preset: {name}");
    let _ = writeln!(text, "n: {}", report.n);
    let _ = writeln!(text, "|W|: {}", report.w.len());
    let _ = writeln!(text, "|U|: {}", report.u.len());
    let _ = writeln!(text, "family: {} members", report.family_size);
    let _ = writeln!(text, "candidates: {}", report.candidates.len());
    for (i, c) in report.candidates.iter().enumerate() {
        let _ = writeln!(
            text,
            "candidate {}: H size {}, complement size {}, closed {}, maximal {}, readjoin regenerates {}",
            i + 1,
            c.h.len(),
            c.complement.elements.len(),
            c.complement.closed,
            c.complement.maximal,
            c.readjoin_regenerates
        );
    }
    let _ = writeln!(
        text,
        "sequential witness: size {}, valid {}",
        report.sequential_witness.len(),
        report.sequential_witness_valid
    );
    let json = json!({
        "verb": "sandbox",
        "preset": name,
        "report": serde_json::to_value(&report).expect("reports serialize"),
    });
    Ok(Report { text, json, exit: 0 })
}
