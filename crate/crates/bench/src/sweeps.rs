use btc_ipc::fees::FeeRate;
use btc_ipc::forge::CheckpointBundle;

use crate::fixtures::{self, Signers};
use crate::{fee_for, sat_to_usd, tps, BenchError, BenchRow, Exec, RowKind, SignerMode, Sweep, SweepSpec};

/// Run one sweep. Rows come out in a fixed order that does not depend on
/// the executor.
pub fn run_sweep(sweep: Sweep, spec: &SweepSpec, exec: Exec) -> Result<Vec<BenchRow>, BenchError> {
    spec.validate()?;
    let rows = match sweep {
        Sweep::Transfer | Sweep::Throughput => transfer_rows(sweep, spec, exec, signer_sets(spec)),
        Sweep::Validator => validator_rows(spec, exec),
        Sweep::Threshold => {
            let mut sets = vec![Signers::new(SignerMode::Threshold, 1)];
            sets.extend(spec.n_validators.iter().map(|&n| Signers::new(SignerMode::Multisig, n)));
            let mut rows = transfer_rows(sweep, spec, exec, sets);
            rows.retain(|r| r.kind != RowKind::Native);
            rows
        }
        Sweep::Withdraw => withdraw_rows(spec, exec),
        Sweep::Checkpoint => checkpoint_rows(spec, exec),
    };
    Ok(rows)
}

fn signer_sets(spec: &SweepSpec) -> Vec<Signers> {
    match spec.signer_mode {
        SignerMode::Threshold => vec![Signers::new(SignerMode::Threshold, 1)],
        SignerMode::Multisig => spec.n_validators.iter().map(|&n| Signers::new(SignerMode::Multisig, n)).collect(),
    }
}

fn rate(spec: &SweepSpec) -> FeeRate {
    FeeRate::from_sat_per_vb(spec.fee_rate_sat_vb)
}

#[allow(clippy::too_many_arguments)]
fn bundle_row(
    sweep: Sweep,
    kind: RowKind,
    signers: &Signers,
    n_targets: usize,
    n_requested: usize,
    n_items: usize,
    bundle: &CheckpointBundle,
    spec: &SweepSpec,
) -> BenchRow {
    let checkpoint = bundle.checkpoint_tx.vbytes();
    let batch = bundle.batch_transfer_tx.as_ref().map_or(0, |t| t.vbytes());
    let total = checkpoint + batch;
    let amortized = total as f64 / n_items as f64;
    let fee_sat = fee_for(amortized, spec.fee_rate_sat_vb);
    BenchRow {
        sweep: sweep.name().into(),
        kind,
        signer_mode: signers.mode,
        n_validators: signers.n_validators(),
        n_target_subnets: n_targets,
        n_requested,
        n_items,
        capped: n_requested > n_items,
        checkpoint_period_hours: None,
        fee_rate_sat_vb: spec.fee_rate_sat_vb,
        checkpoint_tx_vbytes: checkpoint,
        batch_tx_vbytes: batch,
        total_vbytes: total,
        amortized_vbytes_per_item: amortized,
        fee_sat,
        total_fee_sat: rate(spec).fee(checkpoint) + rate(spec).fee(batch),
        fee_usd: sat_to_usd(fee_sat),
        effective_tps: Some(tps(amortized)),
    }
}

fn native_row(sweep: Sweep, spec: &SweepSpec) -> BenchRow {
    let tx = fixtures::native_transfer(rate(spec));
    let vb = tx.vbytes();
    let fee = rate(spec).fee(vb);
    BenchRow {
        sweep: sweep.name().into(),
        kind: RowKind::Native,
        signer_mode: SignerMode::Threshold,
        n_validators: 1,
        n_target_subnets: 0,
        n_requested: 1,
        n_items: 1,
        capped: false,
        checkpoint_period_hours: None,
        fee_rate_sat_vb: spec.fee_rate_sat_vb,
        checkpoint_tx_vbytes: vb,
        batch_tx_vbytes: 0,
        total_vbytes: vb,
        amortized_vbytes_per_item: vb as f64,
        fee_sat: fee,
        total_fee_sat: fee,
        fee_usd: sat_to_usd(fee),
        effective_tps: Some(tps(vb as f64)),
    }
}

/// Requested sizes plus the cap itself, with anything above the cap
/// clamped and flagged.
fn requests(spec: &SweepSpec, cap: usize) -> Vec<(usize, usize)> {
    let mut req: Vec<usize> = spec.n_items.iter().copied().chain(std::iter::once(cap)).filter(|&n| n > 0).collect();
    req.sort_unstable();
    req.dedup();
    req.into_iter().map(|n| (n, n.min(cap))).filter(|&(_, n)| n > 0).collect()
}

fn transfer_rows(sweep: Sweep, spec: &SweepSpec, exec: Exec, sets: Vec<Signers>) -> Vec<BenchRow> {
    let rate = rate(spec);
    let lanes: Vec<(Signers, usize)> =
        sets.into_iter().flat_map(|s| spec.n_target_subnets.iter().map(move |&t| (s.clone(), t))).collect();
    let capped = exec.map(lanes, |(s, t)| {
        let cap = fixtures::max_batch(&s, t, rate, spec.max_tx_vbytes);
        (s, t, cap)
    });
    let jobs: Vec<(Signers, usize, usize, usize)> = capped
        .into_iter()
        .flat_map(|(s, t, cap)| requests(spec, cap).into_iter().map(move |(req, n)| (s.clone(), t, req, n)))
        .collect();
    let mut rows = vec![native_row(sweep, spec)];
    rows.extend(exec.map(jobs, |(s, t, req, n)| {
        let b = fixtures::transfer_bundle(&s, n, t, rate, spec.max_tx_vbytes).expect("within the measured cap");
        bundle_row(sweep, RowKind::Bundle, &s, t, req, n, &b, spec)
    }));
    rows
}

/// Smallest batch whose amortized size is below `native_vbytes`.
pub fn break_even(
    signers: &Signers,
    n_targets: usize,
    native_vbytes: usize,
    spec: &SweepSpec,
) -> Option<(usize, CheckpointBundle)> {
    let rate = rate(spec);
    (1..)
        .map_while(|n| fixtures::transfer_bundle(signers, n, n_targets, rate, spec.max_tx_vbytes).ok().map(|b| (n, b)))
        .find(|(n, b)| b.total_vbytes() < native_vbytes * n)
}

fn validator_rows(spec: &SweepSpec, exec: Exec) -> Vec<BenchRow> {
    let sets: Vec<Signers> = spec.n_validators.iter().map(|&n| Signers::new(SignerMode::Multisig, n)).collect();
    let native = native_row(Sweep::Validator, spec);
    let mut rows = transfer_rows(Sweep::Validator, spec, exec, sets.clone());
    let lanes: Vec<(Signers, usize)> =
        sets.into_iter().flat_map(|s| spec.n_target_subnets.iter().map(move |&t| (s.clone(), t))).collect();
    rows.extend(
        exec.map(lanes, |(s, t)| {
            break_even(&s, t, native.total_vbytes, spec)
                .map(|(n, b)| bundle_row(Sweep::Validator, RowKind::BreakEven, &s, t, n, n, &b, spec))
        })
        .into_iter()
        .flatten(),
    );
    rows
}

fn withdraw_rows(spec: &SweepSpec, exec: Exec) -> Vec<BenchRow> {
    let rate = rate(spec);
    let capped = exec.map(signer_sets(spec), |s| {
        let cap = fixtures::max_withdrawals(&s, rate, spec.max_tx_vbytes);
        (s, cap)
    });
    let jobs: Vec<(Signers, usize, usize)> = capped
        .into_iter()
        .flat_map(|(s, cap)| requests(spec, cap).into_iter().map(move |(req, n)| (s.clone(), req, n)))
        .collect();
    exec.map(jobs, |(s, req, n)| {
        let b = fixtures::withdraw_bundle(&s, n, rate, spec.max_tx_vbytes).expect("within the withdrawal cap");
        bundle_row(Sweep::Withdraw, RowKind::Bundle, &s, 0, req, n, &b, spec)
    })
}

fn checkpoint_rows(spec: &SweepSpec, exec: Exec) -> Vec<BenchRow> {
    let rate = rate(spec);
    let jobs: Vec<(Signers, u64)> = signer_sets(spec)
        .into_iter()
        .flat_map(|s| spec.checkpoint_periods.iter().map(move |&p| (s.clone(), p)))
        .collect();
    exec.map(jobs, |(s, period)| {
        let (_, marginal) = fixtures::checkpoint_marginal_vbytes(&s, rate, spec.max_tx_vbytes);
        let per_day = (24 / period) as usize;
        let total = marginal * per_day;
        let fee_sat = rate.fee(marginal);
        BenchRow {
            sweep: Sweep::Checkpoint.name().into(),
            kind: RowKind::Daily,
            signer_mode: s.mode,
            n_validators: s.n_validators(),
            n_target_subnets: 0,
            n_requested: per_day,
            n_items: per_day,
            capped: false,
            checkpoint_period_hours: Some(period),
            fee_rate_sat_vb: spec.fee_rate_sat_vb,
            checkpoint_tx_vbytes: marginal,
            batch_tx_vbytes: 0,
            total_vbytes: total,
            amortized_vbytes_per_item: marginal as f64,
            fee_sat,
            total_fee_sat: rate.fee(total),
            fee_usd: sat_to_usd(fee_sat),
            effective_tps: None,
        }
    })
}
