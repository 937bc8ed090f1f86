// SPDX-License-Identifier: Apache-2.0

//! Single-core cost of creating and checking the three protocol messages.

use crate::stats::mean_std;
use quorumpay_core::committee::Committee;
use quorumpay_core::messages::{
    aggregate_certificate, RecipientAddress, SignedTransferOrder, TransferOrder,
};
use quorumpay_core::protocol::{decode_frame, encode_frame, WireMessage};
use quorumpay_core::{Amount, KeyPair, SequenceNumber, UserData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::hint::black_box;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operation {
    CreateOrder,
    CreateVote,
    CreateCertificate,
    CheckOrder,
    CheckVote,
    CheckCertificate,
}

impl Operation {
    pub const ALL: [Operation; 6] = [
        Operation::CreateOrder,
        Operation::CreateVote,
        Operation::CreateCertificate,
        Operation::CheckOrder,
        Operation::CheckVote,
        Operation::CheckCertificate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Operation::CreateOrder => "Create & Serialize Order",
            Operation::CreateVote => "Create & Serialize Partial Cert.",
            Operation::CreateCertificate => "Create & Serialize Certificate",
            Operation::CheckOrder => "Deserialize & Check Order",
            Operation::CheckVote => "Deserialize & Check Partial Cert.",
            Operation::CheckCertificate => "Deserialize & Check Certificate",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Row {
    pub operation: Operation,
    pub mean_us: f64,
    pub std_us: f64,
    /// Encoded frame size.
    pub bytes: usize,
}

#[derive(Clone, Debug)]
pub struct MicrobenchReport {
    pub authorities: usize,
    pub runs: usize,
    pub rows: Vec<Row>,
}

impl MicrobenchReport {
    pub fn row(&self, operation: Operation) -> &Row {
        self.rows
            .iter()
            .find(|r| r.operation == operation)
            .expect("every operation is measured")
    }

    /// Confirmations per second one core could check, ignoring all other
    /// work.
    pub fn implied_confirmation_rate(&self) -> f64 {
        1e6 / self.row(Operation::CheckCertificate).mean_us
    }
}

impl fmt::Display for MicrobenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} authorities, {} runs per row",
            self.authorities, self.runs
        )?;
        writeln!(f, "{:<36} {:>10} {:>10} {:>7}", "Measure", "Mean (us)", "Std (us)", "Bytes")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<36} {:>10.1} {:>10.1} {:>7}",
                r.operation.label(),
                r.mean_us,
                r.std_us,
                r.bytes
            )?;
        }
        Ok(())
    }
}

fn time(runs: usize, mut body: impl FnMut(usize)) -> Vec<f64> {
    // Warm caches and the allocator first.
    for i in 0..runs.min(20) {
        body(i);
    }
    (0..runs)
        .map(|i| {
            let start = Instant::now();
            body(i);
            start.elapsed().as_secs_f64() * 1e6
        })
        .collect()
}

pub fn run(authorities: usize, runs: usize, seed: u64) -> anyhow::Result<MicrobenchReport> {
    anyhow::ensure!(runs > 0, "need at least one run");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<KeyPair> = (0..authorities).map(|_| KeyPair::generate(&mut rng)).collect();
    let committee = Committee::new(keys.iter().map(|k| k.public()).collect())?;
    let quorum = committee.quorum_threshold();
    let sender = KeyPair::generate(&mut rng);
    let recipient = RecipientAddress::Offchain(KeyPair::generate(&mut rng).address());
    let make_order = |sequence: usize| {
        TransferOrder::new(
            &sender,
            sender.address(),
            recipient,
            Amount(10),
            SequenceNumber(sequence as u64),
            UserData::default(),
        )
        .expect("sender owns the address")
    };

    let order = make_order(0);
    let votes: Vec<SignedTransferOrder> = keys[..quorum]
        .iter()
        .map(|k| SignedTransferOrder::new(order.clone(), k))
        .collect();
    let certificate = aggregate_certificate(&committee, &order, &votes)?;
    let order_frame = encode_frame(1, &WireMessage::TransferOrderRequest(order.clone()));
    let vote_frame = encode_frame(1, &WireMessage::SignedOrderResponse(votes[0].clone()));
    let certificate_frame = encode_frame(1, &WireMessage::ConfirmationRequest(certificate.clone()));

    let mut rows = Vec::new();
    let mut measure = |operation: Operation, bytes: usize, samples: Vec<f64>| {
        let (mean_us, std_us) = mean_std(&samples);
        rows.push(Row {
            operation,
            mean_us,
            std_us,
            bytes,
        });
    };

    let samples = time(runs, |i| {
        let o = make_order(i);
        black_box(encode_frame(i as u64, &WireMessage::TransferOrderRequest(o)));
    });
    measure(Operation::CreateOrder, order_frame.len(), samples);

    let samples = time(runs, |i| {
        let v = SignedTransferOrder::new(order.clone(), &keys[i % authorities]);
        black_box(encode_frame(i as u64, &WireMessage::SignedOrderResponse(v)));
    });
    measure(Operation::CreateVote, vote_frame.len(), samples);

    let samples = time(runs, |i| {
        let c = aggregate_certificate(&committee, &order, &votes).expect("quorum of votes");
        black_box(encode_frame(i as u64, &WireMessage::ConfirmationRequest(c)));
    });
    measure(Operation::CreateCertificate, certificate_frame.len(), samples);

    let samples = time(runs, |_| {
        let Ok((_, WireMessage::TransferOrderRequest(o))) = decode_frame(&order_frame) else {
            panic!("order frame decodes");
        };
        o.verify_signature().expect("valid order");
        black_box(o);
    });
    measure(Operation::CheckOrder, order_frame.len(), samples);

    let samples = time(runs, |_| {
        let Ok((_, WireMessage::SignedOrderResponse(v))) = decode_frame(&vote_frame) else {
            panic!("vote frame decodes");
        };
        v.verify(&committee).expect("valid vote");
        black_box(v);
    });
    measure(Operation::CheckVote, vote_frame.len(), samples);

    let samples = time(runs, |_| {
        let Ok((_, WireMessage::ConfirmationRequest(c))) = decode_frame(&certificate_frame) else {
            panic!("certificate frame decodes");
        };
        c.verify(&committee).expect("valid certificate");
        black_box(c);
    });
    measure(Operation::CheckCertificate, certificate_frame.len(), samples);

    Ok(MicrobenchReport {
        authorities,
        runs,
        rows,
    })
}
