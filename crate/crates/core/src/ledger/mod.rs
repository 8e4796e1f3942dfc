//! Hash-chained, append-only ledger of accounts, revenue-split agreements,
//! GPU contributions and exact integer payouts.
//!
//! The chain persists as one canonical document per line. Every record's
//! hash covers its index, predecessor hash, payload and timestamp, so
//! [`verify_log`] works on the raw file without trusting any parsed state.

mod apportion;
mod chain;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use apportion::{apportion, share_of};
pub use chain::{record_hash, verify_chain, verify_log, LedgerRecord};

use crate::canonical::to_canonical_string;
use crate::clock::TimestampMs;
use crate::digest::Digest;
use crate::pathfinder::BreakthroughEvent;
use crate::sim::ContributionSink;

/// Amounts are integer micro-credits.
pub type MicroCredits = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    AccountOpen {
        account: String,
    },
    /// Providers of `model` share `p_num / p_den` of its revenue, for
    /// revenue posted as of record `effective_from` or later.
    Agreement {
        model: String,
        designer: String,
        p_num: u64,
        p_den: u64,
        effective_from: u64,
    },
    Contribution {
        provider: String,
        gpu_seconds: u64,
        source: String,
    },
    Revenue {
        model: String,
        amount: MicroCredits,
    },
    /// Pays out the amount of the revenue or breakthrough record at
    /// `revenue_ref`.
    Distribution {
        revenue_ref: u64,
        payouts: BTreeMap<String, MicroCredits>,
    },
    Breakthrough {
        task_hash: Digest,
        old_utility: Option<f64>,
        new_utility: f64,
        submitter: String,
        reward: MicroCredits,
        treasury: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("invalid record: {0}")]
    Validation(String),
    #[error("no agreement for model {0:?} is in effect")]
    NoAgreement(String),
    #[error("amount {0} is negative")]
    NegativeAmount(i64),
    #[error("breakthrough already rewarded")]
    DuplicateEvent,
    #[error("unknown account {0:?}")]
    UnknownAccount(String),
    #[error("ledger log is corrupt at record {index}")]
    Corrupt { index: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `[A-Za-z0-9._:-]{1,64}`
pub fn is_valid_account(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|c| c.is_ascii_alphanumeric() || b"._:-".contains(&c))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Terms {
    index: u64,
    designer: String,
    p_num: u64,
    p_den: u64,
    effective_from: u64,
}

/// State derived by replaying payloads in order.
#[derive(Debug, Clone, Default)]
struct State {
    accounts: BTreeSet<String>,
    balances: BTreeMap<String, MicroCredits>,
    agreements: BTreeMap<String, Vec<Terms>>,
    /// Distributable amount of each revenue or breakthrough record.
    payable: BTreeMap<u64, MicroCredits>,
    paid: BTreeSet<u64>,
    breakthroughs: BTreeSet<(Digest, u64)>,
}

impl State {
    fn require_account(&self, id: &str) -> Result<(), String> {
        if self.accounts.contains(id) {
            Ok(())
        } else {
            Err(format!("account {id:?} is not open"))
        }
    }

    fn check(&self, p: &Payload) -> Result<(), String> {
        match p {
            Payload::AccountOpen { account } => {
                if !is_valid_account(account) {
                    return Err(format!("bad account id {account:?}"));
                }
                if self.accounts.contains(account) {
                    return Err(format!("account {account:?} already open"));
                }
            }
            Payload::Agreement { model, designer, p_num, p_den, .. } => {
                if model.is_empty() {
                    return Err("agreement needs a model".into());
                }
                self.require_account(designer)?;
                if *p_den == 0 || p_num > p_den {
                    return Err(format!("provider share {p_num}/{p_den} is not in [0, 1]"));
                }
            }
            Payload::Contribution { provider, gpu_seconds, .. } => {
                self.require_account(provider)?;
                if *gpu_seconds == 0 {
                    return Err("contribution must be positive".into());
                }
            }
            Payload::Revenue { model, .. } => {
                if model.is_empty() {
                    return Err("revenue needs a model".into());
                }
            }
            Payload::Distribution { revenue_ref, payouts } => {
                let amount =
                    self.payable.get(revenue_ref).ok_or_else(|| format!("record {revenue_ref} is not payable"))?;
                if self.paid.contains(revenue_ref) {
                    return Err(format!("record {revenue_ref} is already distributed"));
                }
                for a in payouts.keys() {
                    self.require_account(a)?;
                }
                let total: u128 = payouts.values().map(|&v| v as u128).sum();
                if total != *amount as u128 {
                    return Err(format!("payouts sum to {total}, expected {amount}"));
                }
            }
            Payload::Breakthrough { task_hash, old_utility, new_utility, submitter, treasury, .. } => {
                self.require_account(submitter)?;
                self.require_account(treasury)?;
                if !new_utility.is_finite() || old_utility.is_some_and(|u| !u.is_finite()) {
                    return Err("utilities must be finite".into());
                }
                if self.breakthroughs.contains(&(*task_hash, new_utility.to_bits())) {
                    return Err("breakthrough already recorded".into());
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, index: u64, p: &Payload) -> Result<(), String> {
        self.check(p)?;
        match p {
            Payload::AccountOpen { account } => {
                self.accounts.insert(account.clone());
            }
            Payload::Agreement { model, designer, p_num, p_den, effective_from } => {
                self.agreements.entry(model.clone()).or_default().push(Terms {
                    index,
                    designer: designer.clone(),
                    p_num: *p_num,
                    p_den: *p_den,
                    effective_from: *effective_from,
                });
            }
            Payload::Contribution { .. } => {}
            Payload::Revenue { amount, .. } => {
                self.payable.insert(index, *amount);
            }
            Payload::Distribution { revenue_ref, payouts } => {
                self.paid.insert(*revenue_ref);
                for (a, v) in payouts {
                    *self.balances.entry(a.clone()).or_default() += v;
                }
            }
            Payload::Breakthrough { task_hash, new_utility, reward, .. } => {
                self.breakthroughs.insert((*task_hash, new_utility.to_bits()));
                self.payable.insert(index, *reward);
            }
        }
        Ok(())
    }

    /// The agreement in force at `as_of`: among those recorded and effective
    /// by then, the latest effective one, later records breaking ties.
    fn terms_at(&self, model: &str, as_of: u64) -> Option<&Terms> {
        self.agreements
            .get(model)?
            .iter()
            .filter(|t| t.index <= as_of && t.effective_from <= as_of)
            .max_by_key(|t| (t.effective_from, t.index))
    }
}

/// The two records a distribution writes and the payouts it made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Distributed {
    pub source_index: u64,
    pub distribution_index: u64,
    pub payouts: BTreeMap<String, MicroCredits>,
}

#[derive(Debug)]
pub struct Ledger {
    records: Vec<LedgerRecord>,
    state: State,
    log: Option<PathBuf>,
    breakthrough_share: (u64, u64),
}

impl Default for Ledger {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self { records: Vec::new(), state: State::default(), log: None, breakthrough_share: (1, 2) }
    }

    /// Open or create the log at `path`. An existing log must verify and
    /// replay cleanly.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let mut ledger = Self::in_memory();
        if path.exists() {
            let raw = fs::read(&path)?;
            let records = verify_log(&raw).map_err(|index| LedgerError::Corrupt { index })?;
            for r in records {
                ledger.state.apply(r.index, &r.payload).map_err(|_| LedgerError::Corrupt { index: r.index })?;
                ledger.records.push(r);
            }
        } else {
            File::create(&path)?;
        }
        ledger.log = Some(path);
        Ok(ledger)
    }

    /// Fraction of a breakthrough reward that goes to the submitter.
    pub fn with_breakthrough_share(mut self, num: u64, den: u64) -> Result<Self, LedgerError> {
        if den == 0 || num > den {
            return Err(LedgerError::Validation(format!("submitter share {num}/{den} is not in [0, 1]")));
        }
        self.breakthrough_share = (num, den);
        Ok(self)
    }

    pub fn records(&self) -> &[LedgerRecord] {
        &self.records
    }

    pub fn records_from(&self, index: u64) -> &[LedgerRecord] {
        let i = (index as usize).min(self.records.len());
        &self.records[i..]
    }

    pub fn len(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head_hash(&self) -> Digest {
        self.records.last().map_or(Digest::ZERO, |r| r.hash)
    }

    pub fn append(&mut self, payload: Payload, now: TimestampMs) -> Result<LedgerRecord, LedgerError> {
        let index = self.len();
        let mut next = self.state.clone();
        next.apply(index, &payload).map_err(LedgerError::Validation)?;
        let record = LedgerRecord::new(index, self.head_hash(), payload, now);
        if let Some(path) = &self.log {
            let mut f = OpenOptions::new().append(true).open(path)?;
            f.write_all(format!("{}\n", to_canonical_string(&record)).as_bytes())?;
            f.flush()?;
        }
        self.state = next;
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn open_account(&mut self, account: &str, now: TimestampMs) -> Result<LedgerRecord, LedgerError> {
        self.append(Payload::AccountOpen { account: account.into() }, now)
    }

    pub fn is_open(&self, account: &str) -> bool {
        self.state.accounts.contains(account)
    }

    pub fn add_agreement(
        &mut self,
        model: &str,
        designer: &str,
        p_num: u64,
        p_den: u64,
        effective_from: u64,
        now: TimestampMs,
    ) -> Result<LedgerRecord, LedgerError> {
        self.append(
            Payload::Agreement { model: model.into(), designer: designer.into(), p_num, p_den, effective_from },
            now,
        )
    }

    pub fn add_contribution(
        &mut self,
        provider: &str,
        gpu_seconds: u64,
        source: &str,
        now: TimestampMs,
    ) -> Result<LedgerRecord, LedgerError> {
        self.append(Payload::Contribution { provider: provider.into(), gpu_seconds, source: source.into() }, now)
    }

    /// GPU-seconds per provider over records in `[from, to)`.
    pub fn contributions_in(&self, from: u64, to: u64) -> BTreeMap<String, u64> {
        let mut c = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.index >= from && r.index < to) {
            if let Payload::Contribution { provider, gpu_seconds, .. } = &r.payload {
                *c.entry(provider.clone()).or_default() += gpu_seconds;
            }
        }
        c
    }

    /// Post revenue for `model` and split it under the agreement in force at
    /// record `as_of` (default: the latest record). Providers share by
    /// GPU-seconds contributed in the record window `[from, to)`, which
    /// defaults to everything up to and including `as_of`.
    pub fn distribute_revenue(
        &mut self,
        model: &str,
        amount: i64,
        as_of: Option<u64>,
        window: Option<(u64, u64)>,
        now: TimestampMs,
    ) -> Result<Distributed, LedgerError> {
        if amount < 0 {
            return Err(LedgerError::NegativeAmount(amount));
        }
        let amount = amount as u64;
        let as_of = as_of.unwrap_or(self.len().saturating_sub(1));
        let terms = self.state.terms_at(model, as_of).ok_or_else(|| LedgerError::NoAgreement(model.into()))?.clone();
        let (from, to) = window.unwrap_or((0, as_of + 1));
        let contributions = self.contributions_in(from, to);

        let pool = share_of(amount, terms.p_num, terms.p_den);
        let mut payouts = apportion(pool, &contributions);
        let to_designer = if payouts.is_empty() { amount } else { amount - pool };
        *payouts.entry(terms.designer.clone()).or_default() += to_designer;

        let revenue = self.append(Payload::Revenue { model: model.into(), amount }, now)?;
        let dist = self.append(Payload::Distribution { revenue_ref: revenue.index, payouts: payouts.clone() }, now)?;
        Ok(Distributed { source_index: revenue.index, distribution_index: dist.index, payouts })
    }

    /// Reward a record-breaking plan from `treasury`: the submitter takes the
    /// configured share (floor), the search job's providers split the rest
    /// by GPU-seconds. Without providers the submitter takes everything.
    pub fn post_breakthrough(
        &mut self,
        event: &BreakthroughEvent,
        reward: MicroCredits,
        providers: &BTreeMap<String, u64>,
        treasury: &str,
        now: TimestampMs,
    ) -> Result<Distributed, LedgerError> {
        if self.state.breakthroughs.contains(&(event.task_hash, event.new_utility.to_bits())) {
            return Err(LedgerError::DuplicateEvent);
        }
        let (num, den) = self.breakthrough_share;
        let to_submitter = share_of(reward, num, den);
        let mut payouts = apportion(reward - to_submitter, providers);
        let extra = if payouts.is_empty() { reward - to_submitter } else { 0 };
        *payouts.entry(event.submitter.clone()).or_default() += to_submitter + extra;

        let mut next = self.state.clone();
        let b = Payload::Breakthrough {
            task_hash: event.task_hash,
            old_utility: event.old_utility,
            new_utility: event.new_utility,
            submitter: event.submitter.clone(),
            reward,
            treasury: treasury.into(),
        };
        // Validate both records before writing either.
        next.apply(self.len(), &b).map_err(LedgerError::Validation)?;
        next.check(&Payload::Distribution { revenue_ref: self.len(), payouts: payouts.clone() })
            .map_err(LedgerError::Validation)?;
        let source = self.append(b, now)?;
        let dist = self.append(Payload::Distribution { revenue_ref: source.index, payouts: payouts.clone() }, now)?;
        Ok(Distributed { source_index: source.index, distribution_index: dist.index, payouts })
    }

    pub fn balance(&self, account: &str) -> Result<MicroCredits, LedgerError> {
        if !self.is_open(account) {
            return Err(LedgerError::UnknownAccount(account.into()));
        }
        Ok(self.state.balances.get(account).copied().unwrap_or(0))
    }

    pub fn balances(&self) -> BTreeMap<String, MicroCredits> {
        self.state.accounts.iter().map(|a| (a.clone(), self.state.balances.get(a).copied().unwrap_or(0))).collect()
    }
}

/// Rebuild every account balance from a chain.
pub fn replay_balances(records: &[LedgerRecord]) -> Result<BTreeMap<String, MicroCredits>, LedgerError> {
    verify_chain(records).map_err(|index| LedgerError::Corrupt { index })?;
    let mut ledger = Ledger::in_memory();
    for r in records {
        ledger.state.apply(r.index, &r.payload).map_err(|_| LedgerError::Corrupt { index: r.index })?;
    }
    Ok(ledger.balances())
}

impl ContributionSink for Ledger {
    fn post_contribution(
        &mut self,
        provider: &str,
        gpu_seconds: u64,
        source: &str,
        now: TimestampMs,
    ) -> Result<u64, String> {
        self.add_contribution(provider, gpu_seconds, source, now).map(|r| r.index).map_err(|e| e.to_string())
    }
}
