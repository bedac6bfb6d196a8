use std::collections::BTreeMap;
use std::fs;

use mf::repository::{Filter, Record, RepoError, Repository, StoreName, TopologyNode};
use mf_core::manager::{Sample, SubscriptionRecord};
use mf_core::mib::MibValue;
use mf_core::subscription::{Endpoint, Subscription, Transport};
use mf_core::Oid;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(device: &str, oid: u32, time: u64, v: u32) -> Sample {
    Sample {
        device: device.into(),
        oid: Oid::from_slice(&[1, 3, 6, 1, 2, 1, 2, 2, 1, 10, oid]),
        time,
        agent_time: time,
        value: MibValue::Counter32(v),
        corrected: true,
        pulled: false,
        subscription: "s".into(),
        seq: 0,
    }
}

fn random_samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let dev = format!("dev-{}", rng.random_range(0..7));
            sample(&dev, rng.random_range(1..5), rng.random_range(0..100_000), i as u32)
        })
        .collect()
}

fn sub_record(agent: &str, id: &str, filter: &[&str]) -> SubscriptionRecord {
    let mut sub = Subscription::new(id, Endpoint::new("m", 7000, Transport::Stream))
        .select(Oid::from_slice(&[1, 3, 6, 1, 2, 1, 1, 3, 0]), 1_000);
    for f in filter {
        sub = sub.filter(f);
    }
    SubscriptionRecord { agent: agent.into(), subscription: sub }
}

fn as_samples(records: Vec<Record>) -> Vec<Sample> {
    records
        .into_iter()
        .map(|r| match r {
            Record::Sample(s) => s,
            other => panic!("unexpected {other:?}"),
        })
        .collect()
}

#[test]
fn put_get_delete_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    let rec = Record::Subscription(sub_record("a/1", "hb 1", &[]));
    let key = repo.put(StoreName::Subscriptions, rec.clone()).unwrap();
    assert_eq!(repo.get(StoreName::Subscriptions, &key).unwrap(), rec);
    drop(repo);
    let mut repo = Repository::open(dir.path()).unwrap();
    assert_eq!(repo.get(StoreName::Subscriptions, &key).unwrap(), rec);
    repo.delete(StoreName::Subscriptions, &key).unwrap();
    assert!(matches!(repo.get(StoreName::Subscriptions, &key), Err(RepoError::MissingKey { .. })));
    assert!(matches!(repo.delete(StoreName::Subscriptions, &key), Err(RepoError::MissingKey { .. })));
    assert!(matches!("bogus".parse::<StoreName>(), Err(RepoError::UnknownStore(_))));
}

#[test]
fn empty_range_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    let records: Vec<Record> = random_samples(100, 1).into_iter().map(Record::Sample).collect();
    repo.bulk_append(StoreName::PushedData, &records).unwrap();
    let f = Filter { from: Some(500), to: Some(500), ..Filter::default() };
    assert!(repo.list(StoreName::PushedData, &f).unwrap().is_empty());
    let f = Filter { device: Some("nobody".into()), ..Filter::default() };
    assert!(repo.samples(&f).is_empty());
}

#[test]
fn filtered_queries_match_a_full_scan() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    let all = random_samples(10_000, 2);
    for chunk in all.chunks(250) {
        let records: Vec<Record> = chunk.iter().cloned().map(Record::Sample).collect();
        repo.bulk_append(StoreName::PushedData, &records).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let a: u64 = rng.random_range(0..100_000);
        let b: u64 = rng.random_range(0..100_000);
        let f = Filter {
            device: rng.random_bool(0.5).then(|| format!("dev-{}", rng.random_range(0..8))),
            oid: rng.random_bool(0.3).then(|| sample("", rng.random_range(1..6), 0, 0).oid),
            from: rng.random_bool(0.8).then_some(a.min(b)),
            to: rng.random_bool(0.8).then_some(a.max(b)),
        };
        let oracle: Vec<&Sample> = all
            .iter()
            .filter(|s| {
                f.device.as_ref().is_none_or(|d| *d == s.device)
                    && f.oid.as_ref().is_none_or(|o| *o == s.oid)
                    && f.from.is_none_or(|t| s.time >= t)
                    && f.to.is_none_or(|t| s.time < t)
            })
            .collect();
        let got = as_samples(repo.list(StoreName::PushedData, &f).unwrap());
        assert_eq!(got.iter().collect::<Vec<_>>(), oracle, "{f:?}");
        assert_eq!(repo.samples(&f), got);
    }
    // the index is rebuilt on open
    drop(repo);
    let repo = Repository::open(dir.path()).unwrap();
    let f = Filter { device: Some("dev-3".into()), from: Some(10_000), to: Some(20_000), ..Filter::default() };
    let oracle: Vec<Sample> =
        all.iter().filter(|s| s.device == "dev-3" && (10_000..20_000).contains(&s.time)).cloned().collect();
    assert_eq!(repo.samples(&f), oracle);
}

#[test]
fn query_results_do_not_depend_on_insertion_order() {
    let all = random_samples(2_000, 4);
    let mut shuffled = all.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let f = Filter { device: Some("dev-1".into()), from: Some(20_000), to: Some(70_000), ..Filter::default() };
    let mut results = Vec::new();
    for order in [&all, &shuffled] {
        let dir = tempfile::tempdir().unwrap();
        let mut repo = Repository::open(dir.path()).unwrap();
        let records: Vec<Record> = order.iter().cloned().map(Record::Sample).collect();
        repo.bulk_append(StoreName::PushedData, &records).unwrap();
        let mut got: Vec<(String, Oid, u64, MibValue)> =
            repo.samples(&f).into_iter().map(|s| (s.device, s.oid, s.time, s.value)).collect();
        got.sort();
        results.push(got);
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn bulk_append_counts_and_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    let records: Vec<Record> = random_samples(100, 6).into_iter().map(Record::Sample).collect();
    assert_eq!(repo.bulk_append(StoreName::PushedData, &records).unwrap(), 100);
    assert_eq!(repo.list(StoreName::PushedData, &Filter::all()).unwrap().len(), 100);
    assert!(matches!(repo.bulk_append(StoreName::Subscriptions, &records), Err(RepoError::NotAppendOnly(_))));
    assert!(matches!(repo.put(StoreName::PushedData, records[0].clone()), Err(RepoError::AppendOnly(_))));
    let topo = Record::Topology(TopologyNode { device: "d".into(), host: "h".into(), port: 1, x: 0, y: 0, links: vec![] });
    assert!(matches!(repo.bulk_append(StoreName::PushedData, &[records[1].clone(), topo]), Err(RepoError::WrongRecord { .. })));
    // the refused batch left nothing behind
    assert_eq!(repo.len(StoreName::PushedData), 100);
}

#[test]
fn torn_tail_drops_only_the_last_batch() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    let all = random_samples(30, 7);
    for chunk in all.chunks(10) {
        let records: Vec<Record> = chunk.iter().cloned().map(Record::Sample).collect();
        repo.bulk_append(StoreName::PushedData, &records).unwrap();
    }
    drop(repo);
    let log = dir.path().join("pushed-data").join("log");
    let len = fs::metadata(&log).unwrap().len();
    for cut in [1u64, 17, 90] {
        let copy = tempfile::tempdir().unwrap();
        copy_repo(dir.path(), copy.path());
        let clog = copy.path().join("pushed-data").join("log");
        fs::OpenOptions::new().write(true).open(&clog).unwrap().set_len(len - cut).unwrap();
        let mut repo = Repository::open(copy.path()).unwrap();
        assert_eq!(repo.samples(&Filter::all()), all[..20].to_vec(), "cut {cut}");
        let rec = repo.recovery(StoreName::PushedData).unwrap();
        assert_eq!(rec.batches, 2);
        assert!(rec.truncated_bytes > 0);
        // appending after recovery continues cleanly
        repo.bulk_append(StoreName::PushedData, &[Record::Sample(all[29].clone())]).unwrap();
        drop(repo);
        let repo = Repository::open(copy.path()).unwrap();
        assert_eq!(repo.len(StoreName::PushedData), 21);
        assert_eq!(repo.recovery(StoreName::PushedData).unwrap().truncated_bytes, 0);
    }
    // a flipped byte inside the last batch is caught by its checksum
    let mut bytes = fs::read(&log).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0xff;
    fs::write(&log, bytes).unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    assert_eq!(repo.len(StoreName::PushedData), 20);
}

fn copy_repo(from: &std::path::Path, to: &std::path::Path) {
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            fs::create_dir_all(&target).unwrap();
            copy_repo(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

#[test]
fn interrupted_put_leaves_previous_version() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    let rec = Record::Subscription(sub_record("a", "s", &[]));
    repo.put(StoreName::Subscriptions, rec.clone()).unwrap();
    drop(repo);
    fs::write(dir.path().join("subscriptions").join("a%2Fs.rec.tmp"), b"half").unwrap();
    let repo = Repository::open(dir.path()).unwrap();
    assert_eq!(repo.list(StoreName::Subscriptions, &Filter::all()).unwrap(), vec![rec]);
    assert!(!dir.path().join("subscriptions").join("a%2Fs.rec.tmp").exists());
}

#[test]
fn append_only_stores_are_prefix_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path()).unwrap();
    let mut previous: Vec<Record> = Vec::new();
    for (i, chunk) in random_samples(500, 8).chunks(50).enumerate() {
        let records: Vec<Record> = chunk.iter().cloned().map(Record::Sample).collect();
        repo.bulk_append(StoreName::PushedData, &records).unwrap();
        if i % 3 == 0 {
            drop(repo);
            repo = Repository::open(dir.path()).unwrap();
        }
        let now = repo.list(StoreName::PushedData, &Filter::all()).unwrap();
        assert_eq!(&now[..previous.len()], &previous[..]);
        previous = now;
    }
}

#[test]
fn snapshot_restore_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut repo = Repository::open(dir.path().join("a")).unwrap();
    repo.put(StoreName::Subscriptions, Record::Subscription(sub_record("dev-1", "hb", &["linkDown"]))).unwrap();
    repo.put(StoreName::Subscriptions, Record::Subscription(sub_record("dev-2", "data", &[]))).unwrap();
    repo.put(StoreName::Topology, Record::Topology(TopologyNode {
        device: "dev-1".into(),
        host: "10.0.0.1".into(),
        port: 8161,
        x: 3,
        y: -4,
        links: vec!["dev-2".into()],
    }))
    .unwrap();
    let records: Vec<Record> = random_samples(300, 9).into_iter().map(Record::Sample).collect();
    repo.bulk_append(StoreName::PushedData, &records).unwrap();
    let snap = dir.path().join("snap");
    repo.snapshot(&snap).unwrap();
    let restored = Repository::restore(&snap, dir.path().join("b")).unwrap();
    let contents = |r: &Repository| -> BTreeMap<&'static str, Vec<Record>> {
        StoreName::ALL.iter().map(|s| (s.as_str(), r.list(*s, &Filter::all()).unwrap())).collect()
    };
    assert_eq!(contents(&restored), contents(&repo));
    assert_eq!(restored.list(StoreName::NotificationSubscriptions, &Filter::all()).unwrap().len(), 1);
    // restoring over a populated directory is refused
    assert!(matches!(Repository::restore(&snap, dir.path().join("a")), Err(RepoError::TargetNotEmpty(_))));

    let empty = Repository::open(dir.path().join("c")).unwrap();
    empty.snapshot(dir.path().join("empty-snap")).unwrap();
    let back = Repository::restore(dir.path().join("empty-snap"), dir.path().join("d")).unwrap();
    assert!(back.is_empty());
}

#[test]
fn version_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repository::open(dir.path().join("r")).unwrap();
    repo.snapshot(dir.path().join("snap")).unwrap();
    let text = fs::read(dir.path().join("snap")).unwrap();
    let bumped = String::from_utf8_lossy(&text).replacen(" 1\n", " 9\n", 1);
    fs::write(dir.path().join("snap9"), bumped).unwrap();
    let err = Repository::restore(dir.path().join("snap9"), dir.path().join("x")).unwrap_err();
    assert!(matches!(err, RepoError::VersionMismatch { .. }));
    assert!(err.to_string().contains('9'));
    fs::write(dir.path().join("r").join("VERSION"), "2\n").unwrap();
    assert!(matches!(Repository::open(dir.path().join("r")), Err(RepoError::VersionMismatch { .. })));
}
