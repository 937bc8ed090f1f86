// SPDX-License-Identifier: Apache-2.0

use futures::executor::block_on;
use futures::future::LocalBoxFuture;
use quorumpay_core::client::{
    redeem_to_primary, AccountClient, AuthorityClient, ClientConfig, ClientSnapshot, ClientState,
    CommitteeDriver, NoDelay, WaitMode,
};
use quorumpay_core::local::{InProcessAuthority, LocalCommittee};
use quorumpay_core::messages::{
    AccountInfoQuery, AccountInfoResponse, CertifiedTransfer, RecipientAddress, SignedSyncOrder,
    SignedTransferOrder, TransferOrder,
};
use quorumpay_core::{Address, Amount, Balance, Error, KeyPair, SequenceNumber, UserData};
use std::rc::Rc;

fn all() -> ClientConfig {
    ClientConfig {
        wait_mode: WaitMode::All,
        ..Default::default()
    }
}

fn user(seed: u8) -> KeyPair {
    KeyPair::from_secret_bytes(&[seed; 32])
}

fn funded(net: &LocalCommittee, seed: u8, amount: u64) -> AccountClient {
    let mut c = AccountClient::new(user(seed), net.driver(all()));
    let s = net.fund(c.address(), amount).unwrap();
    c.receive_from_primary(&[s]).unwrap();
    c
}

fn pay(to: &AccountClient) -> RecipientAddress {
    RecipientAddress::Offchain(to.address())
}

fn next_sequence(net: &LocalCommittee, i: usize, a: Address) -> u64 {
    net.authorities[i]
        .account_info(&AccountInfoQuery::summary(a))
        .map_or(0, |info| info.next_sequence.0)
}

#[test]
fn happy_path_settles_everywhere() {
    let net = LocalCommittee::new(4, 1, 1).unwrap();
    let mut x = funded(&net, 1, 100);
    let y = AccountClient::new(user(2), net.driver(all()));
    let cert = block_on(x.initiate_transfer(pay(&y), Amount(10), UserData::default())).unwrap();
    assert!(cert.signatures.len() >= 3);
    for i in 0..4 {
        assert_eq!(next_sequence(&net, i, x.address()), 1);
        let info = net.authorities[i]
            .account_info(&AccountInfoQuery::summary(y.address()))
            .unwrap();
        assert_eq!(info.balance, Balance(10));
    }
    assert_eq!(x.spendable_balance(), Amount(90));
    assert_eq!(block_on(x.query_balance()).unwrap(), (Balance(90), SequenceNumber(1)));
}

#[test]
fn tolerates_f_crashes_but_not_more() {
    let net = LocalCommittee::new(4, 1, 2).unwrap();
    let mut x = funded(&net, 1, 100);
    let y = AccountClient::new(user(2), net.driver(all()));
    net.authorities[3].set_crashed(true);
    block_on(x.initiate_transfer(pay(&y), Amount(10), UserData::default())).unwrap();
    net.authorities[2].set_crashed(true);
    assert_eq!(
        block_on(x.initiate_transfer(pay(&y), Amount(10), UserData::default())),
        Err(Error::QuorumUnreachable)
    );
    // The failed order stays pending; a different one is refused.
    assert_eq!(
        block_on(x.initiate_transfer(pay(&y), Amount(11), UserData::default())),
        Err(Error::PendingOrderExists)
    );
    net.authorities[2].set_crashed(false);
    let cert = block_on(x.retry_pending()).unwrap().unwrap();
    assert_eq!(cert.sequence(), SequenceNumber(1));
}

#[test]
fn spendable_balance_arithmetic() {
    let net = LocalCommittee::new(4, 1, 3).unwrap();
    let mut x = funded(&net, 1, 100);
    let mut y = funded(&net, 2, 100);
    assert_eq!(x.spendable_balance(), Amount(100));
    block_on(x.initiate_transfer(pay(&y), Amount(30), UserData::default())).unwrap();
    let incoming = block_on(y.certify_transfer(pay(&x), Amount(5), UserData::default())).unwrap();
    x.receive_certificate(incoming).unwrap();
    assert_eq!(x.spendable_balance(), Amount(75));
    assert_eq!(
        block_on(x.certify_transfer(pay(&y), Amount(76), UserData::default())),
        Err(Error::InsufficientFunds {
            balance: 75,
            amount: 76
        })
    );
}

#[test]
fn pending_order_blocks_spending() {
    let mut state = ClientState::new(user(1));
    let net = LocalCommittee::new(4, 1, 4).unwrap();
    let s = net.fund(state.address, 100).unwrap();
    state.funding.insert(1, s);
    state.pending_order = Some(
        TransferOrder::new(
            &user(1),
            state.address,
            RecipientAddress::Offchain(user(2).address()),
            Amount(100),
            SequenceNumber(0),
            UserData::default(),
        )
        .unwrap(),
    );
    assert_eq!(state.spendable_balance(), Amount(0));
}

#[test]
fn repair_replays_missing_certificates() {
    let net = LocalCommittee::new(4, 1, 5).unwrap();
    let mut x = funded(&net, 1, 100);
    let y = AccountClient::new(user(2), net.driver(all()));
    net.authorities[3].set_crashed(true);
    for _ in 0..3 {
        block_on(x.initiate_transfer(pay(&y), Amount(1), UserData::default())).unwrap();
    }
    net.authorities[3].set_crashed(false);
    assert_eq!(next_sequence(&net, 3, x.address()), 0);
    block_on(x.driver().repair_authority(3, x.address(), SequenceNumber(3))).unwrap();
    assert_eq!(next_sequence(&net, 3, x.address()), 3);
    assert_eq!(
        net.authorities[3].shard(0).accounts_hash(),
        net.authorities[0].shard(0).accounts_hash()
    );
}

/// Reports `next_sequence = 0` for every account.
struct ZeroReporter(Rc<InProcessAuthority>);

impl AuthorityClient for ZeroReporter {
    fn handle_transfer_order(&self, o: TransferOrder) -> LocalBoxFuture<'static, Result<SignedTransferOrder, Error>> {
        self.0.handle_transfer_order(o)
    }
    fn handle_confirmation_order(&self, c: CertifiedTransfer) -> LocalBoxFuture<'static, Result<AccountInfoResponse, Error>> {
        self.0.handle_confirmation_order(c)
    }
    fn handle_account_info_query(&self, q: AccountInfoQuery) -> LocalBoxFuture<'static, Result<AccountInfoResponse, Error>> {
        let mut r = self.0.account_info(&q);
        if let Ok(info) = &mut r {
            info.next_sequence = SequenceNumber(0);
        }
        Box::pin(futures::future::ready(r))
    }
    fn handle_primary_sync_order(&self, route: Address, o: SignedSyncOrder) -> LocalBoxFuture<'static, Result<(), Error>> {
        self.0.handle_primary_sync_order(route, o)
    }
}

#[test]
fn zero_reporting_authority_cannot_stall_repair() {
    let net = LocalCommittee::new(4, 1, 6).unwrap();
    let mut clients: Vec<(_, Rc<dyn AuthorityClient>)> = net
        .committee
        .authorities()
        .iter()
        .zip(&net.authorities)
        .map(|(n, a)| (*n, a.clone() as Rc<dyn AuthorityClient>))
        .collect();
    clients[1].1 = Rc::new(ZeroReporter(net.authorities[1].clone()));
    let driver = CommitteeDriver::new(net.committee.clone(), clients, Rc::new(NoDelay), all());
    let mut x = AccountClient::new(user(1), driver);
    x.receive_from_primary(&[net.fund(user(1).address(), 100).unwrap()])
        .unwrap();
    for _ in 0..4 {
        block_on(x.initiate_transfer(
            RecipientAddress::Offchain(user(2).address()),
            Amount(1),
            UserData::default(),
        ))
        .unwrap();
    }
    block_on(x.driver().repair_authority(1, x.address(), SequenceNumber(4))).unwrap();
    assert_eq!(next_sequence(&net, 1, x.address()), 4);
}

#[test]
fn certificates_held_by_f_plus_one_are_retrievable() {
    let net = LocalCommittee::new(4, 1, 7).unwrap();
    let mut x = funded(&net, 1, 100);
    let quorum_only = ClientConfig::default();
    // Certify with all four, but settle only at authorities 0 and 1.
    let cert = block_on(x.certify_transfer(
        RecipientAddress::Offchain(user(2).address()),
        Amount(5),
        UserData::default(),
    ))
    .unwrap();
    net.authorities[0].confirmation_order(cert.clone()).unwrap();
    net.authorities[1].confirmation_order(cert.clone()).unwrap();
    drop(x);

    // A third party that never saw the certificate repairs authority 3.
    let stranger = net.driver(quorum_only);
    block_on(stranger.repair_authority(3, user(1).address(), SequenceNumber(1))).unwrap();
    assert_eq!(next_sequence(&net, 3, user(1).address()), 1);
}

#[test]
fn anyone_can_confirm_and_replays_are_noops() {
    let net = LocalCommittee::new(4, 2, 8).unwrap();
    let mut x = funded(&net, 1, 100);
    let mut y = AccountClient::new(user(2), net.driver(all()));
    let cert = block_on(x.certify_transfer(pay(&y), Amount(10), UserData::default())).unwrap();
    y.receive_certificate(cert.clone()).unwrap();
    let outcome = block_on(y.confirm(&cert)).unwrap();
    assert_eq!(outcome.settled.len(), 4);
    let hashes: Vec<_> = (0..4).map(|i| net.authorities[i].shard(0).state_hash()).collect();
    block_on(y.confirm(&cert)).unwrap();
    let again: Vec<_> = (0..4).map(|i| net.authorities[i].shard(0).state_hash()).collect();
    assert_eq!(hashes, again);
}

#[test]
fn confirming_later_certificate_repairs_earlier_one_first() {
    let net = LocalCommittee::new(4, 1, 9).unwrap();
    let mut x = funded(&net, 1, 100);
    let y = user(2).address();
    net.authorities[2].set_crashed(true);
    let c0 = block_on(x.certify_transfer(RecipientAddress::Offchain(y), Amount(1), UserData::default())).unwrap();
    let c1 = block_on(x.certify_transfer(RecipientAddress::Offchain(y), Amount(2), UserData::default())).unwrap();
    net.authorities[2].set_crashed(false);
    assert!(matches!(
        net.authorities[2].confirmation_order(c1.clone()),
        Err(Error::MissingEarlierConfirmations { .. })
    ));
    block_on(x.driver().confirm_at(2, &c1)).unwrap();
    assert_eq!(next_sequence(&net, 2, x.address()), 2);
    let _ = c0;
}

#[test]
fn client_forwards_missed_sync_orders() {
    let net = LocalCommittee::new(4, 1, 10).unwrap();
    net.authorities[0].set_crashed(true);
    let s1 = net.fund(user(3).address(), 50).unwrap();
    let s2 = net.fund(user(1).address(), 100).unwrap();
    net.authorities[0].set_crashed(false);
    let mut x = AccountClient::new(user(1), net.driver(all()));
    x.receive_from_primary(&[s1, s2]).unwrap();
    assert_eq!(net.authorities[0].shard(0).last_transaction(), 0);
    let cert = block_on(x.certify_transfer(
        RecipientAddress::Offchain(user(2).address()),
        Amount(100),
        UserData::default(),
    ))
    .unwrap();
    assert!(cert
        .signers()
        .any(|n| *n == net.committee.authorities()[0]));
    assert_eq!(net.authorities[0].shard(0).last_transaction(), 2);
    // Forwarding again changes nothing.
    let before = net.authorities[0].shard(0).state_hash();
    net.authorities[0].sync_order(&x.address(), &s2).unwrap();
    assert_eq!(net.authorities[0].shard(0).state_hash(), before);
}

#[test]
fn incoming_credits_are_pushed_to_lagging_authorities() {
    let net = LocalCommittee::new(4, 2, 11).unwrap();
    let mut x = funded(&net, 1, 100);
    let mut y = AccountClient::new(user(2), net.driver(all()));
    net.authorities[3].set_crashed(true);
    let cert = block_on(x.initiate_transfer(pay(&y), Amount(40), UserData::default())).unwrap();
    net.authorities[3].set_crashed(false);
    net.authorities[2].set_crashed(true);
    y.receive_certificate(cert).unwrap();
    let out = block_on(y.initiate_transfer(pay(&x), Amount(40), UserData::default())).unwrap();
    assert!(out
        .signers()
        .any(|n| *n == net.committee.authorities()[3]));
}

#[test]
fn redeem_cycle() {
    let net = LocalCommittee::new(4, 1, 12).unwrap();
    let mut x = funded(&net, 1, 100);
    let p = RecipientAddress::Primary(user(9).address());
    let cert = block_on(x.certify_transfer(p, Amount(40), UserData::default())).unwrap();
    // Redeeming before the confirmation broadcast is fine.
    redeem_to_primary(&cert, &mut net.primary.borrow_mut()).unwrap();
    assert_eq!(net.primary.borrow().total_balance(), Balance(60));
    assert_eq!(
        redeem_to_primary(&cert, &mut net.primary.borrow_mut()),
        Err(Error::AlreadyRedeemed)
    );
    block_on(x.confirm(&cert)).unwrap();
    let offchain = block_on(x.initiate_transfer(
        RecipientAddress::Offchain(user(2).address()),
        Amount(1),
        UserData::default(),
    ))
    .unwrap();
    assert_eq!(
        redeem_to_primary(&offchain, &mut net.primary.borrow_mut()),
        Err(Error::NotPrimaryRecipient)
    );
}

#[test]
fn signed_order_can_be_finished_by_a_proxy() {
    let net = LocalCommittee::new(4, 1, 13).unwrap();
    let x = user(1);
    let s = net.fund(x.address(), 100).unwrap();
    let order = TransferOrder::new(
        &x,
        x.address(),
        RecipientAddress::Offchain(user(2).address()),
        Amount(10),
        SequenceNumber(0),
        UserData::new(b"invoice 7".to_vec()).unwrap(),
    )
    .unwrap();
    let proxy = net.driver(all());
    proxy.observe_sync_orders(&[s]);
    let cert = block_on(proxy.certify(&order, &[])).unwrap();
    block_on(proxy.confirm_certificate(&cert)).unwrap();
    assert_eq!(next_sequence(&net, 0, x.address()), 1);
}

#[test]
fn wallet_persists_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wallet.json");
    let net = LocalCommittee::new(4, 1, 14).unwrap();
    let mut x = AccountClient::new(user(1), net.driver(all())).with_persistence(path.clone());
    x.receive_from_primary(&[net.fund(user(1).address(), 100).unwrap()])
        .unwrap();
    let cert = block_on(x.initiate_transfer(
        RecipientAddress::Offchain(user(2).address()),
        Amount(10),
        UserData::default(),
    ))
    .unwrap();
    let restored = ClientState::from_snapshot(&ClientSnapshot::load(&path).unwrap()).unwrap();
    assert_eq!(restored.next_sequence, SequenceNumber(1));
    assert_eq!(restored.sent.get(&SequenceNumber(0)), Some(&cert));
    assert_eq!(restored.spendable_balance(), Amount(90));
    assert_eq!(restored.address, user(1).address());
}

#[test]
fn cross_shard_transfers_settle() {
    let net = LocalCommittee::new(4, 4, 15).unwrap();
    let mut clients: Vec<_> = (1..=8).map(|i| funded(&net, i, 100)).collect();
    for round in 0..3 {
        for i in 0..clients.len() {
            let to = clients[(i + round + 1) % clients.len()].address();
            block_on(clients[i].initiate_transfer(
                RecipientAddress::Offchain(to),
                Amount(7),
                UserData::default(),
            ))
            .unwrap();
        }
    }
    // Every account paid 21 and received 21.
    for c in &clients {
        for a in &net.authorities {
            let info = a.account_info(&AccountInfoQuery::summary(c.address())).unwrap();
            assert_eq!(info.balance, Balance(100));
        }
    }
}
