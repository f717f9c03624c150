use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use aios_core::rpc::{HttpTransport, RpcTransport};
use aios_core::wire::{
    methods, HumanTaskParams, HumanTaskResult, Params, RegistrySnapshot, RelayTaskParams, RpcRequest,
};

struct Proc(Child);

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts a binary and returns it with the address from its first line.
fn start(bin: &str, args: &[&str]) -> (Proc, String) {
    let mut child = Command::new(bin)
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    std::thread::spawn(move || out.lines().for_each(drop));
    let addr = line.trim().rsplit(' ').next().unwrap().to_string();
    (Proc(child), addr)
}

#[tokio::test]
async fn registry_and_node_binaries_serve_rpc() {
    let (_reg, reg_addr) =
        start(env!("CARGO_BIN_EXE_aios-registry"), &["--listen", "127.0.0.1:0", "--report-period-ms", "200"]);
    let (mut node, node_addr) = start(
        env!("CARGO_BIN_EXE_aios-node"),
        &["--name", "cli-node", "--listen", "127.0.0.1:0", "--registry", &reg_addr, "--dht", "127.0.0.1:0"],
    );
    let t = HttpTransport::new(Duration::from_secs(5));

    let req = RpcRequest::new("l1", methods::LIST_NODES, Params::new());
    let snap: RegistrySnapshot = t.call(&reg_addr, &req, 0).await.unwrap().result_as().unwrap();
    assert_eq!(snap.nodes.len(), 1);
    assert_eq!(snap.nodes[0].report.node_id, "cli-node");

    let ask = HumanTaskParams::ask("tester", "math_agent", "2+3*4", 64);
    let relay = RelayTaskParams { node_id: "cli-node".into(), params: aios_core::wire::to_params(&ask) };
    let resp = t.call(&reg_addr, &RpcRequest::with("r1", methods::RELAY_TASK, &relay), 0).await.unwrap();
    assert_eq!(resp.id, "r1");
    let out: HumanTaskResult = resp.result_as().unwrap();
    assert_eq!(out.content.text, "14");

    let resp = t.call(&node_addr, &RpcRequest::new("s1", methods::SHUTDOWN, Params::new()), 0).await.unwrap();
    assert!(!resp.is_error());
    let status = tokio::task::spawn_blocking(move || node.0.wait()).await.unwrap().unwrap();
    assert!(status.success());
}

#[test]
fn node_rejects_an_isolated_config() {
    let out = Command::new(env!("CARGO_BIN_EXE_aios-node"))
        .args(["--listen", "127.0.0.1:0"])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("standalone"));
}

#[test]
fn bench_simulations_write_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conv.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_aios-bench"))
        .args(["converge", "--nodes", "20", "--rounds", "10", "--seed", "4", "--out"])
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let line: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(line["nodes"], 20);
    assert!(line["coverage"][10].as_f64().unwrap() >= 0.99);
}
