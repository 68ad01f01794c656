use std::sync::{Arc, Mutex};

use graffl::abc::{rejection_sample, AbcConfig, Posterior};
use graffl::federation::wire::{encode_frame, parse_site_traffic, SiteFrame};
use graffl::federation::{
    coordinate, duplex, prepare_site, run_inprocess, run_loopback, site_handle, FederationRunConfig, PreparedSite,
    SiteDescriptor, SummaryMode, Transport, WireMessage,
};
use graffl::gmm::PriorConfig;
use graffl::suffiae::{AeConfig, LabeledBatch};
use graffl::{Error, Matrix, RngStream};

fn observed(rows: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed);
    Matrix::new(rows, dim, (0..rows * dim).map(|_| 3.0 * rng.standard_normal()).collect()).unwrap()
}

fn abc(n: usize, l: usize, dim: usize) -> AbcConfig {
    AbcConfig {
        n_proposals: n,
        n_accept: l,
        k: 2,
        prior: PriorConfig::weakly_informative(2, dim, 2.0),
        dim,
    }
}

fn contiguous(x: &Matrix, parts: usize) -> Vec<PreparedSite> {
    let n = x.rows();
    (0..parts)
        .map(|j| {
            let (lo, hi) = (j * n / parts, (j + 1) * n / parts);
            PreparedSite::from_summaries(j as u32 + 1, x.slice_rows(lo, hi)).unwrap()
        })
        .collect()
}

fn run_config(abc: AbcConfig, sites: &[PreparedSite], seed: u64) -> FederationRunConfig {
    FederationRunConfig {
        abc,
        sites: sites.iter().map(PreparedSite::descriptor).collect(),
        seed,
    }
}

fn centralized(abc: &AbcConfig, x: &Matrix, seed: u64) -> Posterior {
    rejection_sample(abc, x, &mut RngStream::new(seed)).unwrap()
}

#[test]
fn partitions_match_centralized() {
    let x = observed(37, 2, 5);
    let cfg = abc(500, 20, 2);
    for seed in [3, 11] {
        let want = centralized(&cfg, &x, seed);
        for parts in [1, 2, 3, 5] {
            let sites = contiguous(&x, parts);
            let (got, _) = run_inprocess(&run_config(cfg.clone(), &sites, seed), &sites).unwrap();
            assert_eq!(got, want, "seed {seed}, {parts} sites");
        }
    }
}

#[test]
fn every_site_sees_every_iteration() {
    let x = observed(30, 2, 6);
    let sites = contiguous(&x, 3);
    // 95 proposals over 30 rows: three full rounds and one of 5 rows.
    let config = run_config(abc(95, 10, 2), &sites, 1);
    assert_eq!(config.iterations(), 4);
    let (_, stats) = run_inprocess(&config, &sites).unwrap();
    assert_eq!(stats.iter().map(|s| s.batches).collect::<Vec<_>>(), vec![4, 4, 4]);
    assert_eq!(stats.iter().map(|s| s.rows).collect::<Vec<_>>(), vec![35, 30, 30]);
}

#[test]
fn transport_order_does_not_matter() {
    let x = observed(24, 2, 7);
    let sites = contiguous(&x, 3);
    let config = run_config(abc(300, 15, 2), &sites, 9);
    let want = run_inprocess(&config, &sites).unwrap().0;
    let mut coord = Vec::new();
    let mut remote = Vec::new();
    for _ in &sites {
        let (c, s) = duplex();
        coord.push(c);
        remote.push(s);
    }
    // Site j talks over transport (j + 1) mod 3.
    remote.rotate_left(1);
    let got = std::thread::scope(|scope| {
        for (site, mut t) in sites.iter().zip(remote) {
            scope.spawn(move || site.serve(&mut t).unwrap());
        }
        coordinate(&config, &mut coord).unwrap()
    });
    assert_eq!(got, want);
}

/// Honest up to the report, then adds `bias` to every discrepancy.
fn serve_biased<T: Transport>(site: &PreparedSite, t: &mut T, bias: f64) {
    let d = site.descriptor();
    t.send(&WireMessage::Hello(graffl::federation::Hello {
        site_id: d.site_id,
        n_j: d.n_j,
        dim: d.dim,
    }))
    .unwrap();
    while let WireMessage::ProposalBatch(b) = t.recv().unwrap() {
        let mut r = site_handle(site.summaries(), &b).unwrap();
        r.values.iter_mut().for_each(|v| *v += bias);
        t.send(&WireMessage::DiscrepancyReport(r)).unwrap();
    }
}

#[test]
fn inflated_reports_never_enter_the_posterior() {
    let x = observed(30, 2, 8);
    let sites = contiguous(&x, 3);
    let config = run_config(abc(600, 40, 2), &sites, 4);
    let mut coord = Vec::new();
    let mut remote = Vec::new();
    for _ in &sites {
        let (c, s) = duplex();
        coord.push(c);
        remote.push(s);
    }
    let post = std::thread::scope(|scope| {
        for (j, (site, mut t)) in sites.iter().zip(remote).enumerate() {
            let bias = if j == 2 { 1e6 } else { 0.0 };
            scope.spawn(move || serve_biased(site, &mut t, bias));
        }
        coordinate(&config, &mut coord).unwrap()
    });
    // Site 3 owns rows 20..30 of every 30-row round.
    assert!(post.accepted.iter().all(|a| a.index % 30 < 20));
    assert!(post.epsilon < 1e6);
}

#[test]
fn heterogeneous_encoders_share_one_summary_space() {
    let mut rng = RngStream::new(12);
    let mut sites = Vec::new();
    let mut stacked = Vec::new();
    for (j, hidden) in [vec![12], vec![5, 4], vec![]].into_iter().enumerate() {
        let n = 20 + 5 * j;
        let x = Matrix::new(n, 6, (0..n * 6).map(|_| rng.standard_normal()).collect()).unwrap();
        let y = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let batch = LabeledBatch::new(x, y).unwrap();
        let mode = SummaryMode::SuffiAE(AeConfig {
            hidden,
            d: 3,
            epochs: 5,
            ..AeConfig::default()
        });
        let site = prepare_site(j as u32, &batch, &mode, None, &mut rng.split(j as u64)).unwrap();
        assert_eq!(site.descriptor().dim, 3);
        stacked.extend_from_slice(site.summaries().as_slice());
        sites.push(site);
    }
    let x = Matrix::new(stacked.len() / 3, 3, stacked).unwrap();
    let cfg = abc(400, 25, 3);
    let (got, _) = run_inprocess(&run_config(cfg.clone(), &sites, 2), &sites).unwrap();
    assert_eq!(got, centralized(&cfg, &x, 2));
}

#[test]
fn socket_session_carries_only_hello_and_reports() {
    let x = observed(18, 2, 13);
    let sites = contiguous(&x, 3);
    let config = run_config(abc(100, 10, 2), &sites, 6);
    let capture = Arc::new(Mutex::new(Vec::new()));
    let (post, _) = run_loopback(&config, &sites, Some(capture.clone())).unwrap();
    assert_eq!(post, run_inprocess(&config, &sites).unwrap().0);

    let mut bytes = capture.lock().unwrap().clone();
    let frames = parse_site_traffic(&bytes).unwrap();
    let hellos = frames.iter().filter(|f| matches!(f, SiteFrame::Hello(_))).count();
    assert_eq!(hellos, 3);
    assert_eq!(frames.len(), 3 + 3 * config.iterations());

    bytes.extend(encode_frame(&WireMessage::Terminate).unwrap());
    assert!(parse_site_traffic(&bytes).is_err());
}

#[test]
fn wrong_announcement_is_a_handshake_error() {
    let x = observed(10, 2, 14);
    let sites = contiguous(&x, 2);
    let mut config = run_config(abc(50, 5, 2), &sites, 1);
    config.sites[1] = SiteDescriptor {
        n_j: 6,
        ..config.sites[1]
    };
    let err = run_inprocess(&config, &sites).unwrap_err();
    assert!(matches!(err, Error::HandshakeMismatch(_)), "{err}");
}
