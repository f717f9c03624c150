use std::time::Duration;

use aios_core::node::{DhtSection, NodeConfig, NodeError, RunningNode};
use aios_core::registry::{RegistryConfig, RunningRegistry};
use aios_core::rpc::{HttpTransport, RpcTransport};
use aios_core::wire::{
    methods, DelegationParams, DelegationResult, DelegationStatus, Params, RegistrySnapshot, RpcRequest,
};
use serde_json::{json, Value};

fn node_cfg(name: &str, agents: &[&str]) -> NodeConfig {
    let mut cfg = NodeConfig::new(name);
    cfg.listen = "127.0.0.1:0".into();
    cfg.agents = agents.iter().map(|a| a.to_string()).collect();
    cfg.report_period_ms = 100;
    cfg.shutdown_grace_ms = 200;
    cfg
}

fn gossip(cfg: &mut NodeConfig, seeds: &[String]) {
    cfg.p2p = Some(json!({
        "node_id": cfg.node_name,
        "gossip": {"host": "127.0.0.1", "port": 0, "period_ms": 100, "seed_nodes": seeds},
    }));
}

fn stats_task() -> RpcRequest {
    let mut args = Params::new();
    args.insert("dataset".into(), json!("financial_reports_2023.csv"));
    args.insert("features".into(), json!(["mean", "std", "sample_size"]));
    let p =
        DelegationParams::new("extract_data", "analysis_agent", "stats_agent", "Extract statistical features", args);
    RpcRequest::with("task-001", methods::DELEGATE_TASK, &p)
}

#[tokio::test]
async fn nodes_delegate_across_real_sockets() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>dashboard</html>").unwrap();
    let rcfg = RegistryConfig {
        listen: "127.0.0.1:0".into(),
        ui_dir: Some(ui.path().to_path_buf()),
        ..RegistryConfig::default()
    };
    let registry = RunningRegistry::start(&rcfg).await.unwrap();
    let reg_addr = registry.addr().to_string();

    let mut a = node_cfg("node-a", &["stats_agent"]);
    a.registries = vec![reg_addr.clone()];
    a.dht = Some(DhtSection { listen: "127.0.0.1:0".into(), bootstrap: Vec::new() });
    gossip(&mut a, &[]);
    let a = RunningNode::start(&a).await.unwrap();

    let mut b = node_cfg("node-b", &["echo_agent"]);
    b.registries = vec![reg_addr.clone()];
    b.dht = Some(DhtSection { listen: "127.0.0.1:0".into(), bootstrap: vec![a.dht_addr().unwrap().to_string()] });
    gossip(&mut b, &[a.gossip_addr().unwrap().to_string()]);
    let b = RunningNode::start(&b).await.unwrap();

    let t = HttpTransport::new(Duration::from_secs(5));
    let resp = t.call(&b.http_addr().to_string(), &stats_task(), 0).await.unwrap();
    assert_eq!(resp.id, "task-001");
    let r: DelegationResult = resp.result_as().unwrap();
    assert_eq!(r.content.status, DelegationStatus::Completed);
    assert_eq!(Value::Object(r.content.output), json!({"mean": 85.3, "std": 4.2, "sample_size": 500}));
    assert_eq!(a.node().counters().local_executions, 1);
    assert_eq!(b.node().counters().delegations, 1);

    let snap: RegistrySnapshot = t
        .call(&reg_addr, &RpcRequest::new("l", methods::LIST_NODES, Params::new()), 0)
        .await
        .unwrap()
        .result_as()
        .unwrap();
    let ids: Vec<&str> = snap.nodes.iter().map(|n| n.report.node_id.as_str()).collect();
    assert_eq!(ids, ["node-a", "node-b"]);

    let page = reqwest::get(format!("http://{reg_addr}/ui/index.html")).await.unwrap();
    assert!(page.status().is_success());
    assert_eq!(page.text().await.unwrap(), "<html>dashboard</html>");

    b.stop().await;
    a.stop().await;
    registry.stop().await;
}

#[tokio::test]
async fn stopped_node_releases_its_ports() {
    let cfg = {
        let mut c = node_cfg("node-p", &["echo_agent"]);
        c.standalone = true;
        c.dht = Some(DhtSection { listen: "127.0.0.1:0".into(), bootstrap: Vec::new() });
        c
    };
    let first = RunningNode::start(&cfg).await.unwrap();
    let mut again = cfg.clone();
    again.listen = first.http_addr().to_string();
    again.dht = Some(DhtSection { listen: first.dht_addr().unwrap().to_string(), bootstrap: Vec::new() });

    match RunningNode::start(&again).await {
        Err(NodeError::Bind { addr, .. }) => assert_eq!(addr, again.listen),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("second bind on a held port succeeded"),
    }
    first.stop().await;
    let second = RunningNode::start(&again).await.unwrap();
    assert_eq!(second.http_addr().to_string(), again.listen);
    second.stop().await;
}

#[tokio::test]
async fn shutdown_rpc_stops_accepting_work() {
    let mut cfg = node_cfg("node-s", &["echo_agent"]);
    cfg.standalone = true;
    let node = RunningNode::start(&cfg).await.unwrap();
    let addr = node.http_addr().to_string();
    let t = HttpTransport::new(Duration::from_secs(5));
    let resp = t.call(&addr, &RpcRequest::new("s", methods::SHUTDOWN, Params::new()), 0).await.unwrap();
    assert!(!resp.is_error());
    let mut requested = node.shutdown_requested();
    tokio::time::timeout(Duration::from_secs(2), requested.wait()).await.unwrap();
    let report = node.stop().await;
    assert!(report.drained);
    assert!(t.call(&addr, &RpcRequest::new("h", methods::HEALTH, Params::new()), 0).await.is_err());
}
