use std::collections::BTreeSet;

use sste_core::classify::Algorithm;
use sste_core::embedding::{EmbeddingTable, StaticProvider};
use sste_core::experiment::{
    run_experiment, ExperimentConfig, ExperimentError, ExperimentId, ExperimentOutput,
};
use sste_core::featurize::{Featurizer, Mode, NUMERIC_FEATURE_COUNT};
use sste_core::profile::{
    Dataset, Item, Label, LabelCounts, Profile, SectionEntry, SectionTag, SubsectionTag,
};
use sste_core::synth::{generate_corpus, CorpusSpec, SynthCorpus};

fn corpus(llp: usize, flp: usize, clp: usize, sigma: f64, seed: u64) -> SynthCorpus {
    generate_corpus(&CorpusSpec {
        counts: LabelCounts::new(llp, flp, clp),
        seed,
        sigma,
        ..CorpusSpec::default()
    })
    .unwrap()
}

fn provider(c: &SynthCorpus) -> StaticProvider {
    StaticProvider::new(
        "synth",
        EmbeddingTable::from_reader(c.embeddings.as_bytes()).unwrap(),
    )
    .unwrap()
}

fn config(id: ExperimentId, scale: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        scale,
        seed,
        ..ExperimentConfig::new(id)
    }
}

fn run(ds: &Dataset, p: &StaticProvider, cfg: &ExperimentConfig) -> ExperimentOutput {
    let f = Featurizer::new(p).unwrap();
    run_experiment(ds, std::slice::from_ref(&f), cfg).unwrap()
}

#[test]
fn table2_rows_avg_rows_and_disjoint_splits() {
    let c = corpus(60, 60, 0, 1.0, 1);
    let p = provider(&c);
    let out = run(&c.dataset, &p, &config(ExperimentId::Table2, 0.1, 3));
    let families: Vec<&str> = out.rows.iter().map(|r| r.family.as_str()).collect();
    assert_eq!(families.iter().collect::<BTreeSet<_>>().len(), 3);
    assert_eq!(out.rows.len(), 3 * 6);
    for block in out.rows.chunks(6) {
        let names: Vec<&str> = block.iter().map(|r| r.classifier.as_str()).collect();
        let expected: Vec<&str> = Algorithm::ALL
            .iter()
            .map(|a| a.as_str())
            .chain(["avg"])
            .collect();
        assert_eq!(names, expected);
        let mean = block[..5].iter().map(|r| r.accuracy).sum::<f64>() / 5.0;
        let mean_f1 = block[..5].iter().map(|r| r.f1).sum::<f64>() / 5.0;
        assert!((block[5].accuracy - mean).abs() <= 1e-12);
        assert!((block[5].f1 - mean_f1).abs() <= 1e-12);
        assert_eq!(block[5].n_test, 36);
    }
    assert_eq!(out.rows[0].provider, "none");
    assert_eq!(out.rows[0].family, "baseline");
    for split in &out.manifest.splits {
        let train: BTreeSet<_> = split.train.iter().collect();
        assert!(split.test.iter().all(|id| !train.contains(id)));
        assert_eq!((split.train.len(), split.test.len()), (84, 36));
    }
}

#[test]
fn reruns_are_byte_identical_and_written_atomically() {
    let c = corpus(40, 40, 0, 0.7, 2);
    let p = provider(&c);
    let cfg = config(ExperimentId::Table2, 0.05, 9);
    let a = run(&c.dataset, &p, &cfg);
    let b = run(&c.dataset, &p, &cfg);
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.manifest_json(), b.manifest_json());

    let root = tempfile::tempdir().unwrap();
    let dir_a = a.write(&root.path().join("one")).unwrap();
    let dir_b = b.write(&root.path().join("two")).unwrap();
    assert_eq!(dir_a.file_name(), dir_b.file_name());
    for name in ["metrics.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(dir_a.join(name)).unwrap(),
            std::fs::read(dir_b.join(name)).unwrap()
        );
    }
    assert!(!dir_a.join("curve.csv").exists());
    // rewriting the same run replaces it in place
    a.write(&root.path().join("one")).unwrap();
    assert_eq!(
        std::fs::read_dir(root.path().join("one")).unwrap().count(),
        1
    );

    let other = run(&c.dataset, &p, &ExperimentConfig { seed: 10, ..cfg });
    assert_ne!(other.dir_name(), a.dir_name());
}

#[test]
fn write_failure_leaves_nothing_behind() {
    let c = corpus(40, 40, 0, 1.0, 2);
    let p = provider(&c);
    let out = run(&c.dataset, &p, &config(ExperimentId::Table2, 0.05, 1));
    let root = tempfile::tempdir().unwrap();
    let blocker = root.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert!(matches!(
        out.write(&blocker),
        Err(ExperimentError::Io { .. })
    ));
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 1);
}

fn empty_text_profile(id: &str, label: Label) -> Profile {
    let mut item = Item::new();
    item.insert(SubsectionTag::Description, "the and of".to_string());
    Profile::new(
        id,
        label,
        vec![SectionEntry {
            section: SectionTag::Overview,
            items: vec![item],
        }],
    )
    .unwrap()
}

#[test]
fn exclusions_are_counted_and_shrink_the_denominator() {
    let c = corpus(55, 60, 0, 1.0, 4);
    let mut profiles = c.dataset.profiles().to_vec();
    for i in 0..5 {
        profiles.push(empty_text_profile(&format!("blank-{i}"), Label::Llp));
    }
    let ds = Dataset::new(profiles).unwrap();
    let p = provider(&c);
    // at this scale every profile is used
    let out = run(&ds, &p, &config(ExperimentId::Table2, 0.1, 0));
    for r in &out.rows {
        let excluded = r.excluded_train + r.excluded_test;
        if r.family == "baseline" {
            assert_eq!(excluded, 0);
        } else {
            assert_eq!(excluded, 5);
        }
        assert_eq!(r.n_test + r.excluded_test, 36);
    }
    let listed: BTreeSet<&String> = out.manifest.excluded.iter().flat_map(|e| &e.ids).collect();
    assert_eq!(listed.len(), 5);
    assert!(listed.iter().all(|id| id.starts_with("blank-")));
}

#[test]
fn table3_families_and_combined_width() {
    let c = corpus(60, 60, 0, 1.0, 5);
    let p = provider(&c);
    let out = run(&c.dataset, &p, &config(ExperimentId::Table3, 0.1, 0));
    let families: BTreeSet<&str> = out.rows.iter().map(|r| r.family.as_str()).collect();
    assert_eq!(families, BTreeSet::from(["raw", "numeric+raw"]));
    let f = Featurizer::new(&p).unwrap();
    for profile in c.dataset.profiles() {
        let v = f.combined_features(profile, Mode::Raw).unwrap();
        assert_eq!(v.len(), p.table().dim() + NUMERIC_FEATURE_COUNT);
    }
}

#[test]
fn table4_and_table5_label_layouts() {
    let c = corpus(180, 60, 120, 1.0, 6);
    let p = provider(&c);
    let t4 = run(&c.dataset, &p, &config(ExperimentId::Table4, 0.1, 0));
    let s = &t4.manifest.splits[0];
    let prefix = |ids: &[String], pre: &str| ids.iter().filter(|i| i.starts_with(pre)).count();
    assert_eq!(
        (
            prefix(&s.train, "llp"),
            prefix(&s.train, "flp"),
            prefix(&s.train, "clp")
        ),
        (60, 60, 0)
    );
    assert_eq!(
        (
            prefix(&s.test, "llp"),
            prefix(&s.test, "flp"),
            prefix(&s.test, "clp")
        ),
        (120, 0, 120)
    );

    let t5 = run(&c.dataset, &p, &config(ExperimentId::Table5, 0.05, 0));
    let s = &t5.manifest.splits[0];
    assert_eq!((prefix(&s.train, "llp"), prefix(&s.train, "clp")), (60, 60));
    assert_eq!((prefix(&s.test, "llp"), prefix(&s.test, "flp")), (30, 30));
    // CLPs (train) and FLPs (test) are both the positive class: a perfect
    // F1 requires FLPs to be predicted fake
    assert!(t5.rows.iter().all(|r| r.f1 >= 0.0 && r.f1 <= 1.0));
    assert_eq!(Label::Clp.class(), 1);
    assert_eq!(Label::Flp.class(), 1);
}

#[test]
fn fig4_curve_shape() {
    let c = corpus(180, 60, 120, 1.0, 7);
    let p = provider(&c);
    let cfg = ExperimentConfig {
        sweep: vec![1, 5, 20],
        ..config(ExperimentId::Fig4, 0.1, 0)
    };
    let out = run(&c.dataset, &p, &cfg);
    let ns: Vec<usize> = out.curve.iter().map(|pt| pt.n).collect();
    assert_eq!(ns, vec![1, 5, 20]);
    assert_eq!(out.rows.len(), 3 * 6);
    assert_eq!(out.manifest.splits.len(), 3);
    let csv = out.curve_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("provider,mode,n,accuracy\n"));
    let root = tempfile::tempdir().unwrap();
    assert!(out.write(root.path()).unwrap().join("curve.csv").exists());
}

#[test]
fn fig5_absent_section_ablation_is_a_no_op() {
    let mut spec = CorpusSpec {
        counts: LabelCounts::new(74, 60, 14),
        seed: 8,
        ..CorpusSpec::default()
    };
    spec.completion.insert(SectionTag::Scores, 0.0);
    let c = generate_corpus(&spec).unwrap();
    let p = provider(&c);
    let cfg = ExperimentConfig {
        ablate: vec![SectionTag::Scores],
        ..config(ExperimentId::Fig5, 0.1, 0)
    };
    let out = run(&c.dataset, &p, &cfg);
    let (nothing, scores): (Vec<_>, Vec<_>) = out.rows.iter().partition(|r| r.variant == "nothing");
    assert_eq!(nothing.len(), 6);
    for (a, b) in nothing.iter().zip(&scores) {
        assert_eq!(b.variant, "scores");
        assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        assert_eq!(a.f1.to_bits(), b.f1.to_bits());
    }
}

#[test]
fn errors_surface() {
    let c = corpus(10, 10, 0, 1.0, 9);
    let p = provider(&c);
    let f = Featurizer::new(&p).unwrap();
    let err = run_experiment(
        &c.dataset,
        std::slice::from_ref(&f),
        &config(ExperimentId::Table2, 1.0, 0),
    )
    .unwrap_err();
    assert_eq!(err.to_string(), "LLP shortfall 590");
    let err = run_experiment(&c.dataset, &[], &config(ExperimentId::Table4, 0.01, 0)).unwrap_err();
    assert!(matches!(
        err,
        ExperimentError::NoProvider(ExperimentId::Table4)
    ));
}
