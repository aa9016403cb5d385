//! The pipeline stages behind each subcommand. Every function reads its inputs
//! through a [`RunConfig`] and writes artifacts under the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{RunConfig, SamplerKind};
use crate::adaptation::{qual_tsv, Adaptor};
use crate::data::{
    build_groups, build_recall_index, build_sequences, generate_synthetic, leave_one_out_split,
    load_groups, load_interactions, save_groups, CandidateGroup, Catalog, GroupView,
    InteractionLog, Partition, Sampler, UserSequence,
};
use crate::error::{Error, Result};
use crate::evaluation::{dual_distribution_eval, evaluate, reports_tsv, DualInputs};
use crate::ranker::BaseRanker;
use crate::training::{count_params, train_adapter, train_base, Checkpoint, TrainLog};

/// Evaluation scoring path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptorSwitch {
    On,
    Off,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub adaptor: AdaptorSwitch,
    pub dual_dist: bool,
    pub export_qual: bool,
    /// Model to evaluate; defaults to the `ada_checkpoint` key.
    pub checkpoint: Option<PathBuf>,
}

fn prepare_out(c: &RunConfig) -> Result<()> {
    fs::create_dir_all(&c.out)?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn commented(header: &str, body: &str) -> String {
    let mut s: String = header.lines().map(|l| format!("# {l}\n")).collect();
    s.push_str(body);
    s
}

struct Corpus {
    log: InteractionLog,
    seqs: Vec<UserSequence>,
}

fn load_corpus(c: &RunConfig) -> Result<Corpus> {
    let path = c.path(&c.interactions);
    if !path.exists() {
        return Err(Error::Config(format!(
            "interaction file {} not found (run generate first)",
            path.display()
        )));
    }
    let log = load_interactions(&path)?;
    let seqs = build_sequences(&log, c.min_len);
    if seqs.is_empty() {
        return Err(Error::Config(format!(
            "no user has at least min_len={} interactions",
            c.min_len
        )));
    }
    Ok(Corpus { log, seqs })
}

fn load_partition(
    c: &RunConfig,
    corpus: &Corpus,
    partition: Partition,
    max_seq_len: usize,
) -> Result<Vec<CandidateGroup>> {
    let file = match partition {
        Partition::Train => &c.train_groups,
        Partition::Valid => &c.valid_groups,
        Partition::Test => &c.test_groups,
    };
    let path = c.path(file);
    if !path.exists() {
        return Err(Error::Config(format!(
            "group file {} not found (run prepare first)",
            path.display()
        )));
    }
    load_groups(&path, &corpus.seqs, partition, max_seq_len)
}

fn load_checkpoint(path: &Path, what: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!(
            "{what} checkpoint {} not found",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

fn log_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    checkpoint.with_file_name(format!("{stem}_log.tsv"))
}

fn print_log_summary(log: &TrainLog) {
    if let Some(b) = log.best() {
        println!(
            "best epoch {} of {}: valid GAUC {:.4}, NDCG {:.4}",
            log.best_epoch,
            log.rows.last().map_or(0, |r| r.epoch),
            b.valid_gauc,
            b.valid_ndcg
        );
    }
}

fn echo_extra(c: &RunConfig, stage: &str) -> Vec<(String, String)> {
    vec![
        ("stage".into(), stage.into()),
        ("config_hash".into(), c.hash()),
        ("seed".into(), c.seed.to_string()),
    ]
}

/// Writes the synthetic interaction log.
pub fn cmd_generate(c: &RunConfig) -> Result<()> {
    let sc = c.synthetic();
    sc.validate()?;
    prepare_out(c)?;
    let log = generate_synthetic(&sc, c.seed)?;
    log.save(&c.path(&c.interactions), Some(&c.header("generate")))?;
    println!(
        "wrote {} ({} interactions, {} users, {} items)",
        c.path(&c.interactions).display(),
        log.len(),
        log.num_users(),
        log.num_items()
    );
    Ok(())
}

/// Leave-one-out split and negative sampling into train/valid/test group files.
pub fn cmd_prepare(c: &RunConfig) -> Result<()> {
    let corpus = load_corpus(c)?;
    prepare_out(c)?;
    let split = leave_one_out_split(&corpus.seqs);
    let catalog = Catalog::build(&corpus.log, &corpus.seqs);
    let index;
    let sampler = match c.sampler {
        SamplerKind::Mixer => Sampler::Mixer {
            catalog: &catalog,
            exclude_seen: c.exclude_seen,
        },
        SamplerKind::Recall => {
            let d = c.recall_d;
            if d.iter().any(|p| !(*p >= 0.0)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "recall_d {d:?} must be non-negative and sum to 1"
                )));
            }
            index = build_recall_index(
                &corpus.seqs,
                &catalog,
                corpus.log.num_users(),
                &c.recall(),
                c.seed,
            )?;
            Sampler::Recall { index: &index, d }
        }
    };
    let header = c.header("prepare");
    for (partition, inst, file) in [
        (Partition::Train, &split.train, &c.train_groups),
        (Partition::Valid, &split.valid, &c.valid_groups),
        (Partition::Test, &split.test, &c.test_groups),
    ] {
        let groups = build_groups(
            inst,
            &corpus.seqs,
            sampler,
            partition,
            c.seed,
            c.max_seq_len,
        )?;
        let path = c.path(file);
        save_groups(&path, &groups, Some(&header))?;
        println!("wrote {} ({} groups)", path.display(), groups.len());
    }
    Ok(())
}

/// First training stage: Θ alone.
pub fn cmd_train_base(c: &RunConfig) -> Result<()> {
    let tc = c.train();
    tc.validate()?;
    let corpus = load_corpus(c)?;
    let rc = c.ranker(corpus.log.num_items(), corpus.log.num_users());
    rc.validate()?;
    let train = load_partition(c, &corpus, Partition::Train, rc.max_seq_len)?;
    let valid = load_partition(c, &corpus, Partition::Valid, rc.max_seq_len)?;
    prepare_out(c)?;
    let (base, log) = train_base(BaseRanker::new(rc, c.seed)?, &train, &valid, &tc)?;
    let path = c.path(&c.base_checkpoint);
    Checkpoint::from_model(&base, None, &echo_extra(c, "base")).save(&path)?;
    println!("wrote {}", path.display());
    write(&log_path(&path), &log.tsv(Some(&c.header("train-base"))))?;
    print_log_summary(&log);
    Ok(())
}

/// The run config must describe the same ranker as a checkpoint it is paired with.
fn check_ranker_matches(c: &RunConfig, ck: &Checkpoint, what: &str) -> Result<()> {
    let rc = ck.ranker_config()?;
    let want = c.ranker(rc.num_items, rc.num_users);
    if want != rc {
        return Err(Error::Config(format!(
            "{what} checkpoint was trained with a different ranker configuration ({rc:?}); config asks for {want:?}"
        )));
    }
    Ok(())
}

/// Second training stage under the configured strategy.
pub fn cmd_train_adapt(c: &RunConfig) -> Result<()> {
    let tc = c.train();
    tc.validate()?;
    let ac = c.adaptor();
    ac.validate()?;
    let base_path = c.path(&c.base_checkpoint);
    let base = if c.strategy.needs_base() {
        let ck = load_checkpoint(&base_path, &format!("strategy {} needs a base", c.strategy))?;
        check_ranker_matches(c, &ck, "base")?;
        Some(ck.model()?.0)
    } else {
        None
    };
    let corpus = load_corpus(c)?;
    let rc = c.ranker(corpus.log.num_items(), corpus.log.num_users());
    rc.validate()?;
    if let Some(b) = &base {
        if b.config() != &rc {
            return Err(Error::Config(format!(
                "base checkpoint vocabulary ({} items, {} users) differs from the interaction file ({} items, {} users)",
                b.config().num_items,
                b.config().num_users,
                rc.num_items,
                rc.num_users
            )));
        }
    }
    let train = load_partition(c, &corpus, Partition::Train, rc.max_seq_len)?;
    let valid = load_partition(c, &corpus, Partition::Valid, rc.max_seq_len)?;
    prepare_out(c)?;
    let (theta, phi, log) =
        train_adapter(base.as_ref(), &rc, &ac, c.strategy, &train, &valid, &tc)?;
    let path = c.path(&c.ada_checkpoint);
    let mut extra = echo_extra(c, "adapt");
    extra.push(("strategy".into(), c.strategy.to_string()));
    Checkpoint::from_model(&theta, Some(&phi), &extra).save(&path)?;
    println!("wrote {}", path.display());
    write(&log_path(&path), &log.tsv(Some(&c.header("train-adapt"))))?;
    print_log_summary(&log);
    Ok(())
}

/// Test-set metrics, plus the optional two-distribution comparison and the
/// per-group `z`/α dump.
pub fn cmd_eval(c: &RunConfig, opt: &EvalOptions) -> Result<()> {
    let ck_path = opt
        .checkpoint
        .clone()
        .unwrap_or_else(|| c.path(&c.ada_checkpoint));
    let ck = load_checkpoint(&ck_path, "model")?;
    let (theta, phi) = ck.model()?;
    if phi.is_none() && (opt.adaptor == AdaptorSwitch::On || opt.dual_dist || opt.export_qual) {
        return Err(Error::Config(format!(
            "{} has no adaptor section; use --adaptor=off without --dual-dist/--export-qual",
            ck_path.display()
        )));
    }
    let corpus = load_corpus(c)?;
    let msl = theta.config().max_seq_len;
    let test = load_partition(c, &corpus, Partition::Test, msl)?;
    prepare_out(c)?;
    let header = c.header("eval");
    let bs = c.eval_batch_size.max(1);

    let adaptor = if opt.adaptor == AdaptorSwitch::On {
        phi.as_ref()
    } else {
        None
    };
    let mut report = evaluate(&theta, adaptor, &test, bs)?;
    report.setting = "test".into();
    let mut reports = vec![];
    let base_path = c.path(&c.base_checkpoint);
    let base_model = if base_path.exists() && base_path != ck_path {
        Some(Checkpoint::load(&base_path)?.model()?.0)
    } else {
        None
    };
    let base_report = match (&base_model, adaptor) {
        (Some(b), Some(_)) if b.config() == theta.config() => {
            let r = evaluate(b, None, &test, bs)?.labeled("base", "test");
            report.compare_with(&r)?;
            Some(r)
        }
        _ => None,
    };
    if let Some(r) = &base_report {
        print!("{}", r.table());
        reports.push(r);
    }
    print!("{}", report.table());
    reports.push(&report);
    let name = match opt.adaptor {
        AdaptorSwitch::On => "eval_adaptor_on.tsv",
        AdaptorSwitch::Off => "eval_adaptor_off.tsv",
    };
    write(&c.path(name), &reports_tsv(&reports, Some(&header)))?;

    if opt.dual_dist {
        let base = base_model.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "--dual-dist needs the base checkpoint {} next to the adapted model",
                base_path.display()
            ))
        })?;
        let phi = phi.as_ref().expect("checked above");
        let split = leave_one_out_split(&corpus.seqs);
        let catalog = Catalog::build(&corpus.log, &corpus.seqs);
        let index = build_recall_index(
            &corpus.seqs,
            &catalog,
            corpus.log.num_users(),
            &c.recall(),
            c.seed,
        )?;
        let dual = dual_distribution_eval(
            &DualInputs {
                base,
                ada: (&theta, phi),
                index: &index,
                seqs: &corpus.seqs,
                test: &split.test,
                seed: c.seed,
                max_seq_len: msl,
                batch_size: bs,
            },
            c.d_same,
            c.d_new,
        )?;
        print!("{}", dual.table());
        let body = format!("metric\tmodel\tsetting\tvalue\n{}", dual.tsv_rows());
        write(&c.path("eval_dual.tsv"), &commented(&header, &body))?;
    }

    if opt.export_qual {
        let phi: &Adaptor<f32> = phi.as_ref().expect("checked above");
        let views: Vec<GroupView<'_>> = test.iter().map(CandidateGroup::view).collect();
        let scored = phi.score_groups(&theta, &views, bs)?;
        let rows: Vec<_> = test.iter().map(|g| &g.provenance).zip(&scored).collect();
        write(&c.path("qual.tsv"), &qual_tsv(&rows, Some(&header)))?;
    }
    Ok(())
}

/// Parameter counts of a checkpoint.
pub fn cmd_inspect(c: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let path = checkpoint.map_or_else(|| c.path(&c.ada_checkpoint), Path::to_path_buf);
    let ck = load_checkpoint(&path, "model")?;
    let report = count_params(&ck)?;
    print!("{}", report.table());
    prepare_out(c)?;
    let stem = path
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let header = format!(
        "ada-ranker inspect\ncheckpoint={stem}\ntheta_checksum={:08x}",
        ck.theta_checksum()
    );
    write(
        &c.path(&format!("inspect_{stem}.tsv")),
        &commented(&header, &report.tsv()),
    )?;
    Ok(())
}
