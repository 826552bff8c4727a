use nvcim::device::builtin_profile;
use nvcim::harness::{
    gen_workload, pretrain_autoencoder, run_pipeline, train_store, tune_stream, Method, PipelineSettings, RunPoint,
    RunReport, Tuning, WorkloadSpec,
};
use nvcim::rng::{stream, streams};
use nvcim::store::PromptStore;
use nvcim::Error;

fn small_settings() -> PipelineSettings {
    PipelineSettings {
        tune_steps: 60,
        ..Default::default()
    }
}

fn point(buffer_size: usize, sigma: f64) -> RunPoint {
    RunPoint {
        buffer_size,
        sigma,
        tuning: Tuning::NoiseAware,
        write_verify: false,
        seed: 7,
    }
}

fn strip_time(mut r: RunReport) -> RunReport {
    r.wall_time_ms = 0.0;
    r
}

#[test]
fn separated_domains_retrieve_perfectly_without_variation() {
    let spec = WorkloadSpec {
        num_domains: 3,
        separation: 10.0,
        samples_per_domain: 12,
        queries_per_domain: 10,
        ..Default::default()
    };
    let w = gen_workload(&spec).unwrap();
    let profile = builtin_profile("NVM-3").unwrap();
    let reports = run_pipeline(&w, &profile, &small_settings(), &point(12, 0.0), &[Method::Ssa, Method::Mips], None).unwrap();
    for r in &reports {
        assert_eq!(r.retrieval_accuracy, 1.0, "{:?}", r.method);
        assert!(r.num_entries >= 2);
        assert_eq!(r.num_queries, 30);
    }
}

#[test]
fn unfilled_buffer_is_a_state_error() {
    let w = gen_workload(&WorkloadSpec {
        samples_per_domain: 2,
        ..Default::default()
    })
    .unwrap();
    let profile = builtin_profile("NVM-3").unwrap();
    let err = run_pipeline(&w, &profile, &small_settings(), &point(50, 0.1), &[Method::Ssa], None).unwrap_err();
    assert!(matches!(err, Error::State(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn runs_are_deterministic() {
    let w = gen_workload(&WorkloadSpec::default()).unwrap();
    let profile = builtin_profile("NVM-2").unwrap();
    let p = RunPoint {
        write_verify: true,
        ..point(20, 0.1)
    };
    let run = || {
        run_pipeline(&w, &profile, &small_settings(), &p, &[Method::Ssa, Method::Mips], None)
            .unwrap()
            .into_iter()
            .map(strip_time)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn staged_tuning_then_programming_matches_training() {
    let w = gen_workload(&WorkloadSpec::default()).unwrap();
    let profile = builtin_profile("NVM-3").unwrap();
    let settings = small_settings();
    let p = point(30, 0.05);
    let ae = pretrain_autoencoder(&w, &settings, p.seed).unwrap();
    let trained = train_store(&w, &profile, &settings, &p, ae.clone()).unwrap();

    let task = settings.task.build(&w, p.seed).unwrap();
    let tuned = tune_stream(&w, &task, &profile, &settings, &p, ae, |_| Ok(())).unwrap();
    assert_eq!(tuned.prompts, trained.prompts);
    assert_eq!(tuned.logs.len(), tuned.prompts.len());
    assert_eq!(tuned.selections, trained.selections);

    let mut store = PromptStore::new(settings.store_config(), profile).unwrap();
    let policy = settings.verify_policy(p.write_verify).unwrap();
    let mut rng = stream(p.seed, streams::PROGRAM);
    for ep in &tuned.prompts {
        store.program(ep, &policy, &mut rng).unwrap();
    }
    assert_eq!(store.entries(), trained.store.entries());
    assert_eq!(store.subarrays(), trained.store.subarrays());
}
