//! One function per subcommand. Each returns its files; `run` commits them.

use std::path::{Path, PathBuf};

use instab::construction::schedule::check_r;
use instab::construction::{build_unstable, compute_schedule, Construction, HeightSchedule, TowerStage};
use instab::exact::{format_rational, rat, to_decimal, BinString, Rational};
use instab::lz78::{ratio_csv, ratio_series, RatioPoint};
use instab::randomness::{block_reports, combine_tests, lil_test, lln_test, verdict, BlockReport};
use instab::transform::{ergodic_average, orbit};
use instab::{lz78_encode, Observable, Sigma, SolovayTest};
use serde_json::{json, Value};

use crate::config::{rational, sigma, FileConfig};
use crate::output::{verify, Outputs};
use crate::{
    load_file, BuildCmd, Cli, CliError, Command, CompressArgs, ConstructArgs, OrbitArgs, ReportArgs, ScheduleArgs,
    TestCmd,
};

/// Files of a run plus the one echoed to stdout when no directory is given.
struct Run {
    outputs: Outputs,
    primary: String,
    primary_text: String,
}

impl Run {
    fn new(command: &str) -> Run {
        Run { outputs: Outputs::new(command), primary: String::new(), primary_text: String::new() }
    }

    fn add(&mut self, name: &str, text: String) {
        if self.primary.is_empty() {
            self.primary = name.to_string();
            self.primary_text.clone_from(&text);
        }
        self.outputs.add(name, text);
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_file(&cli)?;
    let (run, out) = match cli.command {
        Command::Schedule(a) => (schedule(&a, &file)?, a.out.out),
        Command::Build(a) => (build(&a, &file)?, a.out.out),
        Command::Orbit(a) => (orbit_cmd(&a, &file)?, a.out.out),
        Command::Test(t) => match t {
            TestCmd::Lln(a) => {
                let test = lln_test(&a.eps).map_err(usage)?;
                let input = parse_bits(a.input.as_deref())?;
                (test_report("test lln", &test, a.max_n, input.as_ref())?, a.out.out)
            }
            TestCmd::Lil(a) => {
                let test = lil_test(&a.delta).map_err(usage)?;
                let input = parse_bits(a.input.as_deref())?;
                let last = test.first_block() + a.blocks.max(1) - 1;
                (test_report("test lil", &test, last, input.as_ref())?, a.out.out)
            }
            TestCmd::Combined(a) => {
                let mut members: Vec<Box<dyn SolovayTest>> = Vec::new();
                for e in &a.eps {
                    members.push(Box::new(lln_test(e).map_err(usage)?));
                }
                for d in &a.delta {
                    members.push(Box::new(lil_test(d).map_err(usage)?));
                }
                let test = combine_tests(members).map_err(usage)?;
                let input = parse_bits(a.input.as_deref())?;
                (test_report("test combined", &test, a.blocks.max(1), input.as_ref())?, a.out.out)
            }
        },
        Command::Construct(a) => (construct(&a, &file)?, a.out.out),
        Command::Compress(a) => (compress(&a, &file)?, a.out.out),
        Command::Report(a) => (report(&a)?, a.out.out),
    };
    match out.or_else(|| file.out.as_ref().map(PathBuf::from)) {
        Some(dir) => {
            let m = run.outputs.commit(&dir)?;
            for f in &m.files {
                println!("{}  {}", f.sha256, dir.join(&f.path).display());
            }
        }
        None => print!("{}", run.primary_text),
    }
    Ok(())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_bits(s: Option<&str>) -> Result<Option<BinString>, CliError> {
    s.map(|b| b.trim().parse::<BinString>().map_err(usage)).transpose()
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value");
    s.push('\n');
    s
}

/// Heights as JSON numbers while they fit in 64 bits, strings beyond.
fn height_value(h: u128) -> Value {
    u64::try_from(h).map_or_else(|_| Value::String(h.to_string()), Value::from)
}

fn schedule(a: &ScheduleArgs, file: &FileConfig) -> Result<Run, CliError> {
    let r = match (&a.r, &file.r) {
        (Some(r), _) => r.clone(),
        (None, Some(s)) => rational(s).map_err(usage)?,
        (None, None) => rat(1, 8),
    };
    let sig = match (&a.sigma, &file.sigma) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => sigma(s).map_err(usage)?,
        (None, None) => Sigma::Log2 { add: 0 },
    };
    check_r(&r).map_err(usage)?;
    let toy = a.toy.clone().or_else(|| file.heights.clone());
    let sched = match toy {
        Some(h) => HeightSchedule::toy(&r, h.into_iter().map(u128::from).collect()).map_err(usage)?,
        None => compute_schedule(&sig, &r, a.count)?,
    };
    let heights: Vec<Value> = sched
        .h
        .iter()
        .enumerate()
        .map(|(i, &h)| json!({ "index": i as i64 - 2, "h": height_value(h) }))
        .collect();
    let v = json!({
        "r": format_rational(&r),
        "sigma": sig.to_string(),
        "toy": sched.toy,
        "heights": heights,
        "inequality": sched.inequality_report(&sig),
    });
    let mut run = Run::new("schedule");
    run.add("schedule.json", pretty(&v));
    Ok(run)
}

fn build(a: &BuildCmd, file: &FileConfig) -> Result<Run, CliError> {
    let cfg = a.tower.build_args().resolve(file)?;
    let mut c = Construction::new(cfg)?;
    c.ensure_stage(a.stages)?;
    let mut stages = Vec::new();
    let mut run = Run::new("build");
    for rec in c.stage_records()? {
        let s = rec.s;
        let gamma = if s == 0 {
            Value::Null
        } else {
            let (g, printed) = c.tower.gamma(s)?;
            json!({ "exact": format_rational(&g), "printed": printed.as_ref().map(format_rational) })
        };
        let mut v = serde_json::to_value(&rec).expect("stage record");
        v["gamma"] = gamma;
        stages.push(v);
    }
    run.add("stages.json", pretty(&Value::Array(stages)));
    for s in 0..=c.tower.top() {
        let Ok(g) = c.tower.pi_gadget(s, a.max_levels) else { continue };
        let delta = &c.tower.stage(s)?.delta;
        let delta = instab::Gadget { stage_id: s, columns: vec![delta.clone()] };
        let v = json!({ "stage": s, "pi": g.to_json(), "delta": delta.to_json() });
        run.outputs.add(&format!("gadget_{s}.json"), pretty(&v));
    }
    Ok(run)
}

fn orbit_cmd(a: &OrbitArgs, file: &FileConfig) -> Result<Run, CliError> {
    let cfg = a.tower.build_args().resolve(file)?;
    if a.x < rat(0, 1) || a.x >= rat(1, 1) {
        return Err(usage(format!("transform-engine: start point {} is outside [0, 1)", format_rational(&a.x))));
    }
    let mut c = Construction::new(cfg)?;
    c.ensure_stage(a.stage)?;
    let st = TowerStage { tower: &c.tower, s: a.stage };
    let pi = c.tower.partition.clone();
    let o = orbit(&st, &a.x, a.n, &pi);
    let avg = ergodic_average(&st, &a.x, o.defined_up_to.max(1), &Observable::Pi1, &pi)?;
    let summary = json!({
        "stage": a.stage,
        "start": format_rational(&a.x),
        "requested": a.n,
        "defined_up_to": o.defined_up_to,
        "name": o.name.to_string(),
        "average_pi1": format_rational(&avg),
        "average_pi1_decimal": to_decimal(&avg, 20),
    });
    let mut run = Run::new("orbit");
    run.add("orbit.csv", o.to_csv());
    run.outputs.add("orbit.json", pretty(&summary));
    Ok(run)
}

fn test_report(command: &str, test: &dyn SolovayTest, last: u64, input: Option<&BinString>) -> Result<Run, CliError> {
    let reports = block_reports(test, last)?;
    let mut csv = String::from("block,prefix_len,exact_mass,mass_decimal_20dp,bound,within_bound\n");
    for b in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.block,
            b.prefix_len,
            format_rational(&b.exact_mass),
            to_decimal(&b.exact_mass, 20),
            b.bound,
            b.within_bound
        ));
    }
    let mut v = json!({
        "test_id": test.id(),
        "total": test.is_total(),
        "blocks": reports,
        "all_within_bound": reports.iter().all(|b: &BlockReport| b.within_bound),
    });
    if let Some(x) = input {
        v["verdict"] = serde_json::to_value(verdict(test, x)).expect("verdict");
    }
    let mut run = Run::new(command);
    run.add("report.json", pretty(&v));
    run.outputs.add("blocks.csv", csv);
    Ok(run)
}

fn construct(a: &ConstructArgs, file: &FileConfig) -> Result<Run, CliError> {
    let mut args = a.tower.build_args();
    args.k_max = a.k_max;
    args.lookahead = a.lookahead;
    args.cell_cap = a.cell_cap;
    let cfg = args.resolve(file)?;
    let c = build_unstable(cfg)?;
    let sig = c.config.sigma.clone();
    let mut cps = String::from("k,kind,s,n,ones,freq_decimal,freq_exact\n");
    for st in &c.steps {
        if let Some(cp) = &st.checkpoint {
            cps.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                st.k,
                st.kind,
                st.s,
                cp.n,
                cp.ones,
                to_decimal(&cp.freq, 20),
                format_rational(&cp.freq)
            ));
        }
    }
    let mut run = Run::new("construct");
    run.add("trace.jsonl", c.trace_jsonl()?);
    run.outputs.add("omega.txt", format!("{}\n", c.omega));
    run.outputs.add("name.txt", format!("{}\n", c.name));
    run.outputs.add("checkpoints.csv", cps);
    run.outputs.add("deficiency.csv", c.deficiency_trace().to_csv(&|j| sig.eval(j)));
    Ok(run)
}

/// Name and `(n, is_even)` checkpoints from a construction trace.
fn read_trace(path: &Path) -> Result<(BinString, Vec<(usize, bool)>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::output::io(path, e))?;
    let bad = |m: &str| usage(format!("universal-code: {}: {m}", path.display()));
    let mut name = None;
    let mut cps = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|_| bad("not a JSON-lines trace"))?;
        match v["record"].as_str() {
            Some("summary") => {
                let s = v["name"].as_str().ok_or_else(|| bad("summary without a name"))?;
                name = Some(s.parse::<BinString>().map_err(|_| bad("summary name is not a bit string"))?);
            }
            Some("step") => {
                let st = &v["step"];
                if let Some(n) = st["checkpoint"]["n"].as_u64() {
                    cps.push((n as usize, st["kind"].as_str() == Some("even")));
                }
            }
            _ => {}
        }
    }
    Ok((name.ok_or_else(|| bad("no summary record"))?, cps))
}

fn compress(a: &CompressArgs, file: &FileConfig) -> Result<Run, CliError> {
    let margin = match (&a.margin, &file.margin) {
        (Some(m), _) => Some(m.clone()),
        (None, Some(s)) => Some(rational(s).map_err(usage)?),
        (None, None) => None,
    };
    let (x, labelled) = match (&a.trace, &a.bits) {
        (Some(p), _) => {
            let (name, cps) = read_trace(p)?;
            (name, Some(cps))
        }
        (None, Some(b)) => (b.trim().parse::<BinString>().map_err(usage)?, None),
        (None, None) => return Err(usage("cli-harness: compress needs --trace or --bits")),
    };
    let mut ns: Vec<usize> = match (&a.checkpoints, &labelled) {
        (Some(c), _) => c.clone(),
        (None, Some(cps)) => cps.iter().map(|c| c.0).collect(),
        (None, None) => {
            let mut v: Vec<usize> = (0..).map(|i| 1usize << i).take_while(|&n| n < x.len()).collect();
            v.push(x.len());
            v
        }
    };
    ns.sort_unstable();
    ns.dedup();
    let points = ratio_series(&x, &ns).map_err(usage)?;
    let parse = lz78_encode(&x);
    let mut summary = json!({
        "length": x.len(),
        "phrases": parse.phrases.len(),
        "code_length": parse.code_length,
        "points": points,
    });
    if let Some(cps) = &labelled {
        let kind = |p: &RatioPoint| cps.iter().find(|c| c.0 == p.n).map(|c| c.1);
        let even = points.iter().filter(|p| kind(p) == Some(true)).map(|p| p.ratio.clone()).max();
        let odd = points.iter().filter(|p| kind(p) == Some(false)).map(|p| p.ratio.clone()).min();
        let gap: Option<Rational> = even.zip(odd).map(|(e, o)| e - o);
        summary["gap"] = json!(gap.as_ref().map(format_rational));
        summary["gap_decimal"] = json!(gap.as_ref().map(|g| to_decimal(g, 20)));
        if let Some(m) = &margin {
            let ok = gap.as_ref().is_some_and(|g| g >= m);
            summary["margin"] = json!(format_rational(m));
            if !ok {
                return Err(CliError::Compute(instab::Error::Code(format!(
                    "ratio gap {} is below the margin {}",
                    gap.as_ref().map_or("undefined".into(), |g| to_decimal(g, 6)),
                    format_rational(m)
                ))));
            }
        }
    } else if margin.is_some() {
        return Err(usage("cli-harness: --margin needs --trace"));
    }
    let mut run = Run::new("compress");
    run.add("ratio.csv", ratio_csv(&points));
    run.outputs.add("compress.json", pretty(&summary));
    Ok(run)
}

fn report(a: &ReportArgs) -> Result<Run, CliError> {
    let (manifest, bad) = verify(&a.dir)?;
    if !bad.is_empty() {
        return Err(CliError::Io(format!("manifest check failed in {}: {}", a.dir.display(), bad.join("; "))));
    }
    let mut md = format!("# {} outputs in {}\n\n", manifest.command, a.dir.display());
    md.push_str(&format!("All {} files match the manifest.\n\n", manifest.files.len()));
    md.push_str("| file | bytes | sha256 |\n|---|---|---|\n");
    for f in &manifest.files {
        md.push_str(&format!("| {} | {} | {} |\n", f.path, f.bytes, f.sha256));
    }
    let trace = a.dir.join("trace.jsonl");
    if manifest.files.iter().any(|f| f.path == "trace.jsonl") {
        let text = std::fs::read_to_string(&trace).map_err(|e| crate::output::io(&trace, e))?;
        md.push_str("\n| k | kind | stage | n | ones frequency | peak M | penalty ok |\n|---|---|---|---|---|---|---|\n");
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).map_err(|_| usage("malformed trace line"))?;
            if v["record"] == "step" {
                let st = &v["step"];
                let cp = &st["checkpoint"];
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} |\n",
                    st["k"],
                    st["kind"].as_str().unwrap_or(""),
                    st["s"],
                    cp["n"].as_u64().map_or("-".into(), |n| n.to_string()),
                    cp["freq"].as_str().unwrap_or("-"),
                    st["peak"].as_str().unwrap_or(""),
                    st["penalty_ok"],
                ));
            }
            if v["record"] == "summary" {
                md.push_str(&format!("\nbudget respected: {}\n", v["budget_ok"]));
            }
        }
    }
    let mut run = Run::new("report");
    run.add("report.md", md);
    Ok(run)
}
