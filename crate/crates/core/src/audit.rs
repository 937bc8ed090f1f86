// SPDX-License-Identifier: Apache-2.0

//! Offline audit of authority shard dumps against a Primary snapshot.
//!
//! A dump is line-delimited text: a header, then one `account` line per
//! account carrying the hex of its canonical wire encoding.

use crate::authority::{AccountOffchainState, AuthorityState};
use crate::base::{Address, AuthorityName, PublicKeyBytes, SequenceNumber, ShardId};
use crate::committee::ShardAssignment;
use crate::error::{Error, Result};
use crate::messages::{CertifiedTransfer, RecipientAddress};
use crate::primary::{ParsedSnapshot, PrimarySnapshot};
use crate::wire::Wire;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

const DUMP_MAGIC: &str = "quorumpay-dump v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardDump {
    pub authority: AuthorityName,
    pub shard_id: ShardId,
    pub num_shards: u32,
    pub last_transaction: u64,
    pub accounts: BTreeMap<Address, AccountOffchainState>,
}

impl ShardDump {
    pub fn from_state(state: &AuthorityState) -> Self {
        ShardDump {
            authority: state.name(),
            shard_id: state.shard_id(),
            num_shards: state.shards().num_shards(),
            last_transaction: state.last_transaction(),
            accounts: state.accounts().map(|(a, s)| (*a, s.clone())).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{DUMP_MAGIC}\nauthority {}\nshard {} {}\nlast_transaction {}\n",
            self.authority.to_hex(),
            self.shard_id,
            self.num_shards,
            self.last_transaction
        );
        for (address, account) in &self.accounts {
            out.push_str(&format!(
                "account {} {}\n",
                address.to_hex(),
                hex::encode(account.to_bytes())
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| {
            Error::MalformedMessage(format!("dump line {}: {what}", line + 1))
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut field = |name: &str| -> Result<(usize, Vec<&str>)> {
            let (i, line) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.first() != Some(&name) {
                return Err(bad(i, &format!("expected `{name}`")));
            }
            Ok((i, parts[1..].to_vec()))
        };
        let (i, magic) = field("quorumpay-dump")?;
        if magic != ["v1"] {
            return Err(bad(i, "unsupported dump version"));
        }
        let (i, name) = field("authority")?;
        let authority = match name.as_slice() {
            [h] => PublicKeyBytes::from_hex(h).map_err(|_| bad(i, "bad authority name"))?,
            _ => return Err(bad(i, "bad authority line")),
        };
        let (i, shard) = field("shard")?;
        let (shard_id, num_shards) = match shard.as_slice() {
            [s, n] => (
                s.parse().map_err(|_| bad(i, "bad shard id"))?,
                n.parse().map_err(|_| bad(i, "bad shard count"))?,
            ),
            _ => return Err(bad(i, "bad shard line")),
        };
        let (i, last) = field("last_transaction")?;
        let last_transaction = match last.as_slice() {
            [n] => n.parse().map_err(|_| bad(i, "bad index"))?,
            _ => return Err(bad(i, "bad last_transaction line")),
        };
        let mut accounts = BTreeMap::new();
        for (i, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [tag, address, body] = parts.as_slice() else {
                return Err(bad(i, "bad account line"));
            };
            if *tag != "account" {
                return Err(bad(i, "expected `account`"));
            }
            let address = Address::from_hex(address).map_err(|_| bad(i, "bad address"))?;
            let bytes = hex::decode(body).map_err(|_| bad(i, "bad hex"))?;
            let account = AccountOffchainState::from_bytes(&bytes)
                .map_err(|e| bad(i, &e.to_string()))?;
            if accounts.insert(address, account).is_some() {
                return Err(bad(i, "duplicate account"));
            }
        }
        Ok(ShardDump {
            authority,
            shard_id,
            num_shards,
            last_transaction,
            accounts,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    ParseError {
        source: String,
        reason: String,
    },
    UnknownAuthority {
        authority: String,
    },
    MisplacedAccount {
        authority: String,
        shard: ShardId,
        account: String,
    },
    InvalidCertificate {
        authority: String,
        sender: String,
        sequence: u64,
        reason: String,
    },
    ConfirmedLogGap {
        authority: String,
        account: String,
        next_sequence: u64,
        detail: String,
    },
    MisdirectedCredit {
        authority: String,
        account: String,
        sender: String,
        sequence: u64,
    },
    InvalidPending {
        authority: String,
        account: String,
        detail: String,
    },
    BalanceEquation {
        authority: String,
        account: String,
        lhs: String,
        rhs: String,
    },
    UndeliveredCredit {
        authority: String,
        sender: String,
        sequence: u64,
    },
    UnknownFunding {
        authority: String,
        account: String,
        index: u64,
    },
    FundingAhead {
        authority: String,
        last_transaction: u64,
        primary_last_transaction: u64,
    },
    /// Two valid certificates for different orders at one sequence number.
    /// `signers` are the authorities that signed both.
    Equivocation {
        sender: String,
        sequence: u64,
        digests: Vec<String>,
        signers: Vec<String>,
    },
    RedemptionMismatch {
        sender: String,
        sequence: u64,
        detail: String,
    },
    /// Primary funding entry out of order or not signed by the Primary.
    FundingLog {
        index: u64,
    },
    DoubleRedemption {
        sender: String,
        sequence: u64,
    },
    Insolvency {
        funded: String,
        redeemed: String,
        total_balance: String,
    },
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditReport {
    pub authorities: usize,
    pub shards: usize,
    pub accounts: usize,
    pub certificates: usize,
    pub findings: Vec<Finding>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "audited {} authorities, {} shards, {} accounts, {} certificates: {} findings",
            self.authorities,
            self.shards,
            self.accounts,
            self.certificates,
            self.findings.len()
        )?;
        for finding in &self.findings {
            writeln!(f, "  {}", serde_json::to_string(finding).expect("finding serializes"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AuditOptions {
    /// Every cross-shard credit has landed, so the balance equation must hold
    /// with equality and every confirmed credit must appear at its recipient.
    pub quiescent: bool,
}

/// Audits text dumps; unparsable inputs become findings.
pub fn audit_texts(
    dumps: &[(String, String)],
    primary: &str,
    options: AuditOptions,
) -> AuditReport {
    let mut parse_errors = Vec::new();
    let parsed: Vec<ShardDump> = dumps
        .iter()
        .filter_map(|(source, text)| match ShardDump::parse(text) {
            Ok(d) => Some(d),
            Err(e) => {
                parse_errors.push(Finding::ParseError {
                    source: source.clone(),
                    reason: e.to_string(),
                });
                None
            }
        })
        .collect();
    let snapshot = PrimarySnapshot::from_json(primary).and_then(|s| s.parse());
    let mut report = match snapshot {
        Ok(snapshot) => audit(&parsed, &snapshot, options),
        Err(e) => AuditReport {
            findings: vec![Finding::ParseError {
                source: "primary".into(),
                reason: e.to_string(),
            }],
            ..Default::default()
        },
    };
    parse_errors.append(&mut report.findings);
    report.findings = parse_errors;
    report
}

pub fn audit(dumps: &[ShardDump], primary: &ParsedSnapshot, options: AuditOptions) -> AuditReport {
    let committee = &primary.committee;
    let mut report = AuditReport {
        shards: dumps.len(),
        ..Default::default()
    };
    let funding: HashMap<u64, _> = primary
        .funding
        .iter()
        .filter(|s| s.verify(&primary.primary_key).is_ok())
        .map(|s| (s.order.transaction_index, s.order))
        .collect();

    let mut by_authority: BTreeMap<AuthorityName, Vec<&ShardDump>> = BTreeMap::new();
    for d in dumps {
        by_authority.entry(d.authority).or_default().push(d);
    }
    report.authorities = by_authority.len();

    // (sender, sequence) -> order digest -> a valid certificate for it.
    let mut seen: BTreeMap<(Address, SequenceNumber), BTreeMap<[u8; 32], CertifiedTransfer>> =
        BTreeMap::new();

    for (authority, shards) in &by_authority {
        let who = authority.to_hex();
        if !committee.contains(authority) {
            report.findings.push(Finding::UnknownAuthority { authority: who.clone() });
        }
        let accounts: BTreeMap<Address, &AccountOffchainState> = shards
            .iter()
            .flat_map(|d| d.accounts.iter().map(|(a, s)| (*a, s)))
            .collect();
        report.accounts += accounts.len();
        for d in shards {
            if let Ok(assignment) = ShardAssignment::new(d.num_shards) {
                for address in d.accounts.keys() {
                    if assignment.which_shard(address) != d.shard_id {
                        report.findings.push(Finding::MisplacedAccount {
                            authority: who.clone(),
                            shard: d.shard_id,
                            account: address.to_hex(),
                        });
                    }
                }
            }
            if d.last_transaction > primary.last_transaction {
                report.findings.push(Finding::FundingAhead {
                    authority: who.clone(),
                    last_transaction: d.last_transaction,
                    primary_last_transaction: primary.last_transaction,
                });
            }
        }

        let mut valid = |cert: &CertifiedTransfer, findings: &mut Vec<Finding>| -> bool {
            report.certificates += 1;
            match cert.verify(committee) {
                Ok(()) => {
                    seen.entry((cert.sender(), cert.sequence()))
                        .or_default()
                        .entry(cert.order.digest())
                        .or_insert_with(|| cert.clone());
                    true
                }
                Err(e) => {
                    findings.push(Finding::InvalidCertificate {
                        authority: who.clone(),
                        sender: cert.sender().to_hex(),
                        sequence: cert.sequence().0,
                        reason: e.to_string(),
                    });
                    false
                }
            }
        };

        let mut delivered: BTreeSet<(Address, SequenceNumber)> = BTreeSet::new();
        let mut findings = Vec::new();
        for (address, account) in &accounts {
            let acct = address.to_hex();
            if account.confirmed.len() as u64 != account.next_sequence.0 {
                findings.push(Finding::ConfirmedLogGap {
                    authority: who.clone(),
                    account: acct.clone(),
                    next_sequence: account.next_sequence.0,
                    detail: format!("{} confirmed certificates", account.confirmed.len()),
                });
            }
            let mut debited: i128 = 0;
            for (k, cert) in account.confirmed.iter().enumerate() {
                if cert.sender() != *address || cert.sequence().0 != k as u64 {
                    findings.push(Finding::ConfirmedLogGap {
                        authority: who.clone(),
                        account: acct.clone(),
                        next_sequence: account.next_sequence.0,
                        detail: format!(
                            "entry {k} holds {}#{}",
                            cert.sender(),
                            cert.sequence()
                        ),
                    });
                }
                valid(cert, &mut findings);
                debited += i128::from(cert.amount().0);
            }
            let mut credited: i128 = 0;
            for cert in &account.received {
                if cert.order.recipient != RecipientAddress::Offchain(*address) {
                    findings.push(Finding::MisdirectedCredit {
                        authority: who.clone(),
                        account: acct.clone(),
                        sender: cert.sender().to_hex(),
                        sequence: cert.sequence().0,
                    });
                }
                valid(cert, &mut findings);
                delivered.insert((cert.sender(), cert.sequence()));
                credited += i128::from(cert.amount().0);
            }
            let mut funded: i128 = 0;
            for s in &account.synchronized {
                let known = funding.get(&s.transaction_index);
                if known != Some(s) || s.recipient != *address {
                    findings.push(Finding::UnknownFunding {
                        authority: who.clone(),
                        account: acct.clone(),
                        index: s.transaction_index,
                    });
                }
                funded += i128::from(s.amount.0);
            }
            let lhs = account.balance.0 + debited;
            let rhs = funded + credited;
            if lhs > rhs || (options.quiescent && lhs != rhs) {
                findings.push(Finding::BalanceEquation {
                    authority: who.clone(),
                    account: acct.clone(),
                    lhs: lhs.to_string(),
                    rhs: rhs.to_string(),
                });
            }
            if let Some(pending) = &account.pending {
                let mut problems = Vec::new();
                if pending.order.sender != *address {
                    problems.push("sender differs");
                }
                if pending.order.sequence != account.next_sequence {
                    problems.push("sequence is not next");
                }
                if pending.authority != *authority {
                    problems.push("signed by another authority");
                }
                if pending.verify(committee).is_err() {
                    problems.push("vote does not verify");
                }
                if !account.balance.covers(pending.order.amount) {
                    problems.push("amount exceeds balance");
                }
                if !problems.is_empty() {
                    findings.push(Finding::InvalidPending {
                        authority: who.clone(),
                        account: acct.clone(),
                        detail: problems.join(", "),
                    });
                }
            }
        }
        if options.quiescent {
            for account in accounts.values() {
                for cert in &account.confirmed {
                    if let RecipientAddress::Offchain(_) = cert.order.recipient {
                        if !delivered.contains(&(cert.sender(), cert.sequence())) {
                            findings.push(Finding::UndeliveredCredit {
                                authority: who.clone(),
                                sender: cert.sender().to_hex(),
                                sequence: cert.sequence().0,
                            });
                        }
                    }
                }
            }
        }
        report.findings.append(&mut findings);
    }

    for ((sender, sequence), orders) in &seen {
        if orders.len() < 2 {
            continue;
        }
        let certs: Vec<&CertifiedTransfer> = orders.values().collect();
        let mut signers: BTreeSet<AuthorityName> = BTreeSet::new();
        for (i, a) in certs.iter().enumerate() {
            let a_signers: BTreeSet<_> = a.signers().copied().collect();
            for b in &certs[i + 1..] {
                signers.extend(b.signers().filter(|n| a_signers.contains(n)));
            }
        }
        report.findings.push(Finding::Equivocation {
            sender: sender.to_hex(),
            sequence: sequence.0,
            digests: orders.keys().map(hex::encode).collect(),
            signers: signers.iter().map(|n| n.to_hex()).collect(),
        });
    }

    audit_primary(primary, &seen, &mut report.findings);
    report
}

fn audit_primary(
    primary: &ParsedSnapshot,
    seen: &BTreeMap<(Address, SequenceNumber), BTreeMap<[u8; 32], CertifiedTransfer>>,
    findings: &mut Vec<Finding>,
) {
    let mut redeemed: BTreeSet<(Address, SequenceNumber)> = BTreeSet::new();
    let mut redeemed_total: i128 = 0;
    for r in &primary.redemptions {
        if !redeemed.insert((r.sender, r.sequence)) {
            findings.push(Finding::DoubleRedemption {
                sender: r.sender.to_hex(),
                sequence: r.sequence.0,
            });
        }
        redeemed_total += i128::from(r.amount.0);
        if let Some(orders) = seen.get(&(r.sender, r.sequence)) {
            let matches = orders.values().any(|c| {
                c.order.recipient == RecipientAddress::Primary(r.recipient)
                    && c.amount() == r.amount
            });
            if !matches {
                findings.push(Finding::RedemptionMismatch {
                    sender: r.sender.to_hex(),
                    sequence: r.sequence.0,
                    detail: "no certificate matches the redeemed recipient and amount".into(),
                });
            }
        }
    }
    let mut funded_total: i128 = 0;
    for (k, s) in primary.funding.iter().enumerate() {
        funded_total += i128::from(s.order.amount.0);
        if s.order.transaction_index != k as u64 + 1 || s.verify(&primary.primary_key).is_err() {
            findings.push(Finding::FundingLog {
                index: s.order.transaction_index,
            });
        }
    }
    if redeemed_total > funded_total
        || primary.total_balance.0 != funded_total - redeemed_total
        || primary.total_balance.0 < 0
    {
        findings.push(Finding::Insolvency {
            funded: funded_total.to_string(),
            redeemed: redeemed_total.to_string(),
            total_balance: primary.total_balance.0.to_string(),
        });
    }
}

/// Signers common to two certificates for different orders; by quorum
/// intersection there are at least `f + 1` of them.
pub fn conflicting_signers(a: &CertifiedTransfer, b: &CertifiedTransfer) -> Vec<AuthorityName> {
    let a_signers: BTreeSet<_> = a.signers().copied().collect();
    let mut both: Vec<_> = b.signers().filter(|n| a_signers.contains(n)).copied().collect();
    both.sort();
    both.dedup();
    both
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{Amount, Balance, KeyPair, UserData};
    use crate::local::LocalCommittee;
    use crate::messages::{aggregate_certificate, SignedTransferOrder, TransferOrder};

    fn dumps(net: &LocalCommittee) -> Vec<ShardDump> {
        net.authorities
            .iter()
            .flat_map(|a| {
                (0..a.num_shards())
                    .map(|s| ShardDump::from_state(&a.shard(s)))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn snapshot(net: &LocalCommittee) -> ParsedSnapshot {
        net.primary.borrow().snapshot().parse().unwrap()
    }

    fn transfer(net: &LocalCommittee, from: &KeyPair, to: RecipientAddress, amount: u64, seq: u64) -> CertifiedTransfer {
        let order = TransferOrder::new(
            from,
            from.address(),
            to,
            Amount(amount),
            SequenceNumber(seq),
            UserData::default(),
        )
        .unwrap();
        let votes: Vec<_> = net
            .authorities
            .iter()
            .map(|a| a.transfer_order(order.clone()).unwrap())
            .collect();
        let cert = aggregate_certificate(&net.committee, &order, &votes).unwrap();
        for a in &net.authorities {
            a.confirmation_order(cert.clone()).unwrap();
        }
        cert
    }

    fn busy_committee() -> (LocalCommittee, KeyPair, KeyPair) {
        let net = LocalCommittee::new(4, 2, 11).unwrap();
        let x = KeyPair::from_secret_bytes(&[1; 32]);
        let y = KeyPair::from_secret_bytes(&[2; 32]);
        net.fund(x.address(), 100).unwrap();
        net.fund(y.address(), 50).unwrap();
        for seq in 0..5 {
            transfer(&net, &x, RecipientAddress::Offchain(y.address()), 3, seq);
        }
        let cert = transfer(&net, &y, RecipientAddress::Primary(y.address()), 20, 0);
        net.primary
            .borrow_mut()
            .handle_redeem_transaction(&crate::messages::RedeemTransaction { certificate: cert })
            .unwrap();
        (net, x, y)
    }

    #[test]
    fn dump_text_roundtrips() {
        let (net, _, _) = busy_committee();
        for d in dumps(&net) {
            assert_eq!(ShardDump::parse(&d.to_text()).unwrap(), d);
        }
    }

    #[test]
    fn honest_committee_audits_clean() {
        let (net, _, _) = busy_committee();
        let report = audit(&dumps(&net), &snapshot(&net), AuditOptions { quiescent: true });
        assert!(report.is_clean(), "{report}");
        assert_eq!(report.authorities, 4);
        assert_eq!(report.shards, 8);
    }

    #[test]
    fn corrupted_signature_is_reported() {
        let (net, x, _) = busy_committee();
        let mut all = dumps(&net);
        let d = all
            .iter_mut()
            .find(|d| d.accounts.contains_key(&x.address()))
            .unwrap();
        d.accounts.get_mut(&x.address()).unwrap().confirmed[2].signatures[0].1 .0[5] ^= 1;
        let report = audit(&all, &snapshot(&net), AuditOptions::default());
        assert!(report.findings.iter().any(|f| matches!(
            f,
            Finding::InvalidCertificate { sender, sequence: 2, .. } if *sender == x.address().to_hex()
        )));
    }

    #[test]
    fn gaps_and_inflated_balances_are_reported() {
        let (net, x, y) = busy_committee();
        let mut all = dumps(&net);
        for d in all.iter_mut() {
            if let Some(a) = d.accounts.get_mut(&x.address()) {
                a.confirmed.remove(1);
            }
            if let Some(a) = d.accounts.get_mut(&y.address()) {
                a.balance = Balance(a.balance.0 + 1);
            }
        }
        let report = audit(&all, &snapshot(&net), AuditOptions::default());
        assert!(report.findings.iter().any(|f| matches!(f, Finding::ConfirmedLogGap { .. })));
        assert!(report.findings.iter().any(|f| matches!(f, Finding::BalanceEquation { .. })));
    }

    #[test]
    fn equivocation_names_the_double_signers() {
        let net = LocalCommittee::new(4, 1, 12).unwrap();
        let x = KeyPair::from_secret_bytes(&[1; 32]);
        net.fund(x.address(), 100).unwrap();
        let order = |to: u8| {
            TransferOrder::new(
                &x,
                x.address(),
                RecipientAddress::Offchain(KeyPair::from_secret_bytes(&[to; 32]).address()),
                Amount(10),
                SequenceNumber(0),
                UserData::default(),
            )
            .unwrap()
        };
        let (a, b) = (order(2), order(3));
        // Authorities 1 and 2 sign both orders.
        let sign = |o: &TransferOrder, who: &[usize]| {
            let votes: Vec<_> = who
                .iter()
                .map(|&i| SignedTransferOrder::new(o.clone(), &net.authority_keys[i]))
                .collect();
            aggregate_certificate(&net.committee, o, &votes).unwrap()
        };
        let ca = sign(&a, &[0, 1, 2]);
        let cb = sign(&b, &[1, 2, 3]);
        net.authorities[0].confirmation_order(ca.clone()).unwrap();
        net.authorities[3].confirmation_order(cb.clone()).unwrap();
        let report = audit(&dumps(&net), &snapshot(&net), AuditOptions::default());
        let expected: Vec<String> = conflicting_signers(&ca, &cb).iter().map(|n| n.to_hex()).collect();
        assert_eq!(expected.len(), 2);
        assert!(report.findings.iter().any(|f| matches!(
            f,
            Finding::Equivocation { signers, .. } if *signers == expected
        )));
    }

    #[test]
    fn parse_errors_are_not_fatal() {
        let (net, _, _) = busy_committee();
        let mut texts: Vec<(String, String)> = dumps(&net)
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i}"), d.to_text()))
            .collect();
        texts.push(("junk".into(), "quorumpay-dump v1\nauthority zz\n".into()));
        let primary = net.primary.borrow().snapshot().to_json();
        let report = audit_texts(&texts, &primary, AuditOptions::default());
        assert_eq!(report.findings.len(), 1, "{report}");
        assert_eq!(report.authorities, 4);
    }

    #[test]
    fn tampered_primary_log_is_insolvent() {
        let (net, _, _) = busy_committee();
        let mut snap = net.primary.borrow().snapshot();
        snap.total_balance = "1000".into();
        let report = audit(&dumps(&net), &snap.parse().unwrap(), AuditOptions::default());
        assert!(report.findings.iter().any(|f| matches!(f, Finding::Insolvency { .. })));
    }
}
