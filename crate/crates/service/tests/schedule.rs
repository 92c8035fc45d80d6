mod common;

use std::collections::BTreeMap;

use axum::http::StatusCode;
use portrait_service::jobs::JobState;
use serde_json::{json, Value};

use common::*;

fn requests() -> Vec<Value> {
    let styles = ["oil-painting", "business-suit", "studio-headshot"];
    (0..10u64).map(|i| json!({"identity": "alice", "style": styles[i as usize % 3], "count": 1 + i % 3, "seed": 10 * i})).collect()
}

/// Submit every request in `order` and return results keyed by request index.
async fn run(workers: usize, order: &[usize]) -> BTreeMap<usize, Vec<u8>> {
    let t = start(workers);
    assert_eq!(t.train("alice").await.state, JobState::Succeeded);
    let reqs = requests();
    let mut jobs = Vec::new();
    for &i in order {
        let (s, job) = t.post_json("/generations", &reqs[i]).await;
        assert_eq!(s, StatusCode::ACCEPTED);
        jobs.push((i, job));
    }
    let mut out = BTreeMap::new();
    for (i, job) in jobs {
        assert_eq!(t.wait(&job).await.state, JobState::Succeeded);
        let (_, result) = t.get(&format!("/jobs/{}/results", job["id"].as_str().unwrap())).await;
        out.insert(i, serde_json::to_vec(&result).unwrap());
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn results_do_not_depend_on_scheduling() {
    let forward: Vec<usize> = (0..10).collect();
    let backward: Vec<usize> = (0..10).rev().collect();
    let interleaved = [3, 8, 0, 5, 9, 1, 6, 2, 7, 4];
    let serial = run(1, &forward).await;
    assert_eq!(serial.len(), 10);
    assert_eq!(run(2, &backward).await, serial);
    assert_eq!(run(3, &interleaved).await, serial);
}
