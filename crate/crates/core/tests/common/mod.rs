#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use boostpc::sampling::{build_trials, sample_pair_graph};
use boostpc::service::{Study, StudySet};

pub const BIN: &str = env!("CARGO_BIN_EXE_boostpc");

/// Minimal HTTP/1.1 client: one request per connection.
pub fn request(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> std::io::Result<(u16, String)> {
    let mut s = TcpStream::connect(addr)?;
    s.set_read_timeout(Some(Duration::from_secs(30)))?;
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )?;
    let mut raw = Vec::new();
    s.read_to_end(&mut raw)?;
    let text = String::from_utf8_lossy(&raw).into_owned();
    let (head, payload) = text
        .split_once("\r\n\r\n")
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated response"))?;
    let status = head
        .split_whitespace()
        .nth(1)
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad status line"))?;
    Ok((status, payload.to_string()))
}

pub fn get_json(addr: SocketAddr, path: &str) -> serde_json::Value {
    let (status, body) = request(addr, "GET", path, None).unwrap();
    assert_eq!(status, 200, "{path}: {body}");
    serde_json::from_str(&body).unwrap()
}

/// A `boostpc serve` child process, killed on drop.
pub struct Server {
    pub child: Child,
    pub addr: SocketAddr,
}

impl Server {
    pub fn start(study: &Path, log: &Path, extra: &[&str]) -> Self {
        let mut child = Command::new(BIN)
            .args(["serve", "--port", "0", "--study"])
            .arg(study)
            .arg("--log")
            .arg(log)
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: {line:?}"));
        let addr = v["listening"].as_str().unwrap().parse().unwrap();
        Self { child, addr }
    }

    /// SIGKILL, no chance to flush anything.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Writes a study with `sets` sets of `items` items at degree 4.
pub fn write_study(dir: &Path, sets: usize, items: usize, votes_target: u32) -> PathBuf {
    let graphs: Vec<_> = (0..sets)
        .map(|s| sample_pair_graph(&format!("set{s}"), items, 4, s as u64).unwrap())
        .collect();
    let study = Study {
        votes_target,
        sets: (0..sets)
            .map(|s| StudySet {
                set_id: format!("set{s}"),
                n_items: items,
                methods: (0..items).map(|k| format!("m{k}")).collect(),
            })
            .collect(),
        trials: build_trials(&graphs, votes_target, 7),
    };
    let path = dir.join("study.json");
    std::fs::write(&path, serde_json::to_string(&study).unwrap()).unwrap();
    path
}

pub enum Outcome {
    Acked { vote_id: u64, set_id: String, pair: (usize, usize) },
    Complete,
    /// The server went away mid-request.
    Lost,
}

/// One rater step: fetch a trial and vote for its lower-indexed item.
pub fn rate_once(addr: SocketAddr, worker: &str) -> Outcome {
    let Ok((200, body)) = request(addr, "GET", &format!("/api/next?worker={worker}"), None) else {
        return Outcome::Lost;
    };
    let next: serde_json::Value = serde_json::from_str(&body).unwrap();
    if next["status"] == "complete" {
        return Outcome::Complete;
    }
    let t = &next["trial"];
    let pair = (t["pair"][0].as_u64().unwrap() as usize, t["pair"][1].as_u64().unwrap() as usize);
    let set_id = t["set_id"].as_str().unwrap().to_string();
    let vote = serde_json::json!({
        "worker_id": worker,
        "set_id": set_id,
        "pair": [pair.0, pair.1],
        "left_item": t["left_item"],
        "choice": pair.0,
        "duration": 1200,
    });
    match request(addr, "POST", "/api/vote", Some(&vote.to_string())) {
        Ok((200, body)) => {
            let ack: serde_json::Value = serde_json::from_str(&body).unwrap();
            Outcome::Acked {
                vote_id: ack["vote_id"].as_u64().unwrap(),
                set_id,
                pair,
            }
        }
        Ok((status, body)) => panic!("vote rejected with {status}: {body}"),
        Err(_) => Outcome::Lost,
    }
}

pub fn export(addr: SocketAddr) -> Vec<serde_json::Value> {
    let (status, body) = request(addr, "GET", "/api/export", None).unwrap();
    assert_eq!(status, 200);
    body.lines().filter(|l| !l.is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[derive(Debug)]
pub struct DurabilityReport {
    pub exported: usize,
    pub acked_before_kill: usize,
    pub acked_lost: usize,
    pub duplicate_ids: usize,
    pub replayed_after_second_restart: usize,
}

/// Runs `raters` concurrent raters, each submitting `per_rater` votes. The
/// server is SIGKILLed once half the votes are acknowledged, restarted on
/// the same log, and the raters finish their quotas against the new process.
pub fn durability_run(dir: &Path, raters: usize, per_rater: usize) -> DurabilityReport {
    use std::collections::{BTreeMap, BTreeSet};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    let study = write_study(dir, 2, 20, 20);
    let log = dir.join("votes.jsonl");
    let total = raters * per_rater;

    let run_phase = |addr: SocketAddr, quotas: Vec<usize>, acked: Arc<Mutex<Vec<(u64, String, String, (usize, usize))>>>, count: Arc<AtomicUsize>| {
        quotas
            .into_iter()
            .enumerate()
            .map(|(r, quota)| {
                let acked = Arc::clone(&acked);
                let count = Arc::clone(&count);
                std::thread::spawn(move || {
                    let worker = format!("rater{r}");
                    for _ in 0..quota {
                        match rate_once(addr, &worker) {
                            Outcome::Acked { vote_id, set_id, pair } => {
                                acked.lock().unwrap().push((vote_id, worker.clone(), set_id, pair));
                                count.fetch_add(1, Ordering::SeqCst);
                            }
                            Outcome::Complete | Outcome::Lost => break,
                        }
                    }
                })
            })
            .collect::<Vec<_>>()
    };

    let acked = Arc::new(Mutex::new(Vec::new()));
    let count = Arc::new(AtomicUsize::new(0));
    let server = Server::start(&study, &log, &[]);
    let handles = run_phase(server.addr, vec![per_rater; raters], Arc::clone(&acked), Arc::clone(&count));
    while count.load(Ordering::SeqCst) < total / 2 && handles.iter().any(|h| !h.is_finished()) {
        std::thread::sleep(Duration::from_millis(1));
    }
    server.kill();
    for h in handles {
        h.join().unwrap();
    }
    let before_kill = acked.lock().unwrap().clone();

    let server = Server::start(&study, &log, &[]);
    let key = |v: &serde_json::Value| {
        (
            v["vote_id"].as_u64().unwrap(),
            v["worker_id"].as_str().unwrap().to_string(),
            v["set_id"].as_str().unwrap().to_string(),
            (v["pair"][0].as_u64().unwrap() as usize, v["pair"][1].as_u64().unwrap() as usize),
        )
    };
    let recovered: BTreeSet<_> = export(server.addr).iter().map(key).collect();
    let acked_lost = before_kill.iter().filter(|a| !recovered.contains(a)).count();

    let mut done: BTreeMap<String, usize> = BTreeMap::new();
    for (_, w, _, _) in &recovered {
        *done.entry(w.clone()).or_default() += 1;
    }
    let quotas = (0..raters).map(|r| per_rater.saturating_sub(done.get(&format!("rater{r}")).copied().unwrap_or(0))).collect();
    for h in run_phase(server.addr, quotas, Arc::clone(&acked), Arc::clone(&count)) {
        h.join().unwrap();
    }
    let all = export(server.addr);
    let ids: BTreeSet<u64> = all.iter().map(|v| v["vote_id"].as_u64().unwrap()).collect();
    drop(server);

    let server = Server::start(&study, &log, &[]);
    let replayed = export(server.addr).len();
    DurabilityReport {
        exported: all.len(),
        acked_before_kill: before_kill.len(),
        acked_lost,
        duplicate_ids: all.len() - ids.len(),
        replayed_after_second_restart: replayed,
    }
}
