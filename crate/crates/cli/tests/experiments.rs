use std::path::{Path, PathBuf};

use soaguard_cli::experiments::padded_tbm;
use soaguard_cli::experiments::Scenario;
use soaguard_cli::{run_deauthorization, run_scaling, run_supervision, EmbeddedGateway, ExperimentSpec};
use soaguard_core::policy::parse_tbm;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn spec(name: &str) -> ExperimentSpec {
    ExperimentSpec::load(&scenarios().join(name)).unwrap()
}

#[tokio::test]
async fn supervision_is_reproducible_and_conserves_requests() {
    let mut s = spec("supervise-srm1.toml");
    s.request_count = 600;
    let mut reports = Vec::new();
    for _ in 0..2 {
        let gw = EmbeddedGateway::start(&s, false).await.unwrap();
        reports.push(run_supervision(&gw.client, &s).await.unwrap());
    }
    assert_eq!(reports[0].without_timing(), reports[1].without_timing());
    let r = &reports[0];
    assert_eq!(r.seed, s.seed);
    assert_eq!(r.trace.len(), 600);
    assert_eq!(r.total_responded() + r.total_denied(), 600);
    for row in &r.services {
        assert!(row.responded_times <= row.access_times);
    }

    s.seed += 1;
    let gw = EmbeddedGateway::start(&s, false).await.unwrap();
    let other = run_supervision(&gw.client, &s).await.unwrap();
    assert_ne!(other.trace, r.trace);
}

#[tokio::test]
async fn srm2_releases_three_services() {
    let mut s = spec("supervise-srm2.toml");
    s.request_count = 1200;
    let gw = EmbeddedGateway::start(&s, false).await.unwrap();
    let r = run_supervision(&gw.client, &s).await.unwrap();
    for id in ["S3", "S5", "S6"] {
        let row = r.service(id).unwrap();
        assert!(row.access_times > 0);
        assert_eq!(row.responded_times, row.access_times, "{id}");
    }
    for id in ["S4", "S7", "S8"] {
        assert_eq!(r.responded(id), 0, "{id}");
    }
    let m = gw.client.metrics().await.unwrap();
    assert_eq!(m.service("S3").unwrap().response_times, r.responded("S3"));
}

#[tokio::test]
async fn parallel_workers_keep_conservation() {
    let mut s = spec("supervise-srm1.toml");
    s.request_count = 500;
    s.workers = 4;
    let gw = EmbeddedGateway::start(&s, false).await.unwrap();
    let r = run_supervision(&gw.client, &s).await.unwrap();
    assert_eq!(r.total_responded() + r.total_denied(), 500);
    assert_eq!(r.navigation_requests, 8);
    assert_eq!(r.errors, 0);
    assert_eq!(r.responded("S4"), 0);
}

#[tokio::test]
async fn empty_request_count_gives_empty_report() {
    let mut s = spec("supervise-srm1.toml");
    s.request_count = 0;
    let gw = EmbeddedGateway::start(&s, false).await.unwrap();
    let r = run_supervision(&gw.client, &s).await.unwrap();
    assert!(r.services.is_empty() && r.trace.is_empty());
}

#[tokio::test]
async fn schedule_below_threshold_is_fully_served() {
    let mut s = spec("deauth-afr.toml");
    s.frequency_schedule = vec![(1, 100), (2, 200), (3, 300), (4, 350)];
    let gw = EmbeddedGateway::start(&s, false).await.unwrap();
    let r = run_deauthorization(&gw.client, &s).await.unwrap();
    assert!(r.trigger.is_none());
    assert!(r.groups.iter().all(|g| g.responded == g.sent));
}

#[tokio::test]
async fn single_scaling_size() {
    let mut s = spec("scale.toml");
    s.tbm_scale = vec![100];
    let gw = EmbeddedGateway::start(&s, true).await.unwrap();
    let r = run_scaling(&gw.client, &s).await.unwrap();
    assert_eq!(r.scaling.len(), 1);
    assert_eq!(r.scaling[0].repetition_means_us.len(), 5);
    assert!(r.scaling[0].mean_latency_us > 0.0);

    // uploads are refused without the admin endpoint
    let gw = EmbeddedGateway::start(&s, false).await.unwrap();
    assert!(run_scaling(&gw.client, &s).await.is_err());
}

#[test]
fn padding_reaches_the_requested_size() {
    let s = spec("scale.toml");
    let scenario = Scenario::load(&s).unwrap();
    let base = parse_tbm(&padded_tbm(&scenario, 0).unwrap()).unwrap().len();
    assert!(base > 0);
    for size in [1, 100, 1000] {
        let tbm = parse_tbm(&padded_tbm(&scenario, size).unwrap()).unwrap();
        assert_eq!(tbm.len(), size.max(base));
        assert!(tbm.matches("C0", "/SBA/1.jsp", "/SBA/X1.jsp"));
    }
}

#[tokio::test]
async fn reports_are_written() {
    let mut s = spec("deauth-afr.toml");
    s.frequency_schedule = vec![(1, 100), (2, 400)];
    let gw = EmbeddedGateway::start(&s, false).await.unwrap();
    let r = run_deauthorization(&gw.client, &s).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = r.write(dir.path(), "afr").unwrap();
    let names: Vec<_> = files.iter().map(|f| f.file_name().unwrap().to_str().unwrap().to_owned()).collect();
    assert_eq!(names, ["afr.json", "afr-services.csv", "afr-groups.csv"]);
    let groups = std::fs::read_to_string(dir.path().join("afr-groups.csv")).unwrap();
    assert!(groups.starts_with("group,rate_per_min,sent,responded\n1,100,100,100\n"), "{groups}");
    let json: soaguard_cli::ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(json, r);
}
