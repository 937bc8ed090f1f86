// SPDX-License-Identifier: Apache-2.0

//! Client-side request/response transports and the networked
//! [`AuthorityClient`].

use crate::framing::{read_frame, write_frame, Reassembly};
use futures::future::{BoxFuture, LocalBoxFuture};
use futures::FutureExt;
use quorumpay_core::client::{AuthorityClient, Timer};
use quorumpay_core::committee::ShardAssignment;
use quorumpay_core::messages::{
    AccountInfoQuery, AccountInfoResponse, CertifiedTransfer, SignedSyncOrder,
    SignedTransferOrder, TransferOrder,
};
use quorumpay_core::protocol::{decode_frame, decode_nonce, encode_frame, WireMessage};
use quorumpay_core::{Address, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use tokio::net::{TcpStream, UdpSocket};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

/// Sends one request frame and resolves with the correlated response.
pub trait RequestTransport: Send + Sync {
    fn request(&self, to: SocketAddr, message: WireMessage) -> BoxFuture<'static, Result<WireMessage>>;
}

#[derive(Clone, Debug)]
pub struct TransportConfig {
    /// Shortest wait before retransmitting an unanswered datagram. The
    /// actual wait follows measured round trips and doubles per attempt.
    pub retry_interval: Duration,
    /// Transmissions per request before `Timeout`.
    pub max_attempts: u32,
    /// Probability of dropping each datagram, in either direction.
    pub loss: f64,
    pub seed: u64,
    pub socket_buffer: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            retry_interval: Duration::from_millis(500),
            max_attempts: 10,
            loss: 0.0,
            seed: 0,
            socket_buffer: 8 << 20,
        }
    }
}

#[derive(Debug, Default)]
pub struct TransportStats {
    pub sent: AtomicU64,
    pub retransmitted: AtomicU64,
    pub dropped: AtomicU64,
    pub duplicates: AtomicU64,
    pub timeouts: AtomicU64,
}

/// Longest wait between two transmissions of one request.
const MAX_BACKOFF: Duration = Duration::from_secs(5);

/// Smoothed round trip and its mean deviation, sampled only from requests
/// answered on their first transmission. A timed-out first transmission
/// leaves its doubled wait in `backoff` until the next clean sample, so a
/// floor below the real round trip cannot starve the estimator.
#[derive(Default)]
struct RttEstimator {
    srtt: Option<f64>,
    rttvar: f64,
    backoff: Option<Duration>,
}

impl RttEstimator {
    fn sample(&mut self, rtt: Duration) {
        let r = rtt.as_secs_f64();
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2.0;
            }
            Some(s) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (s - r).abs();
                self.srtt = Some(0.875 * s + 0.125 * r);
            }
        }
        self.backoff = None;
    }

    fn back_off(&mut self, wait: Duration) {
        self.backoff = Some(self.backoff.map_or(wait, |b| b.max(wait)));
    }

    fn timeout(&self, floor: Duration) -> Duration {
        let estimate = self.srtt.map_or(0.0, |s| s + 4.0 * self.rttvar);
        Duration::from_secs_f64(estimate)
            .max(self.backoff.unwrap_or_default())
            .clamp(floor, MAX_BACKOFF.max(floor))
    }
}

struct Waiting {
    reply: oneshot::Sender<WireMessage>,
    chunks: Reassembly,
}

type Waiters = Mutex<HashMap<u64, Waiting>>;

struct DatagramInner {
    socket: Arc<UdpSocket>,
    waiting: Arc<Waiters>,
    next_nonce: AtomicU64,
    config: TransportConfig,
    rng: Arc<Mutex<ChaCha8Rng>>,
    stats: Arc<TransportStats>,
    rtt: Mutex<RttEstimator>,
    reader: JoinHandle<()>,
}

impl Drop for DatagramInner {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

/// Datagram transport with retransmission and optional loss injection. One
/// socket serves any number of concurrent requests, matched by nonce.
#[derive(Clone)]
pub struct DatagramTransport {
    inner: Arc<DatagramInner>,
}

fn lose(rng: &Mutex<ChaCha8Rng>, p: f64) -> bool {
    p > 0.0 && rng.lock().unwrap().gen_bool(p)
}

impl DatagramTransport {
    /// Must be called inside a tokio runtime.
    pub async fn bind(bind: SocketAddr, config: TransportConfig) -> std::io::Result<Self> {
        use socket2::{Domain, Protocol, Socket, Type};
        let socket = Socket::new(Domain::for_address(bind), Type::DGRAM, Some(Protocol::UDP))?;
        let _ = socket.set_recv_buffer_size(config.socket_buffer);
        let _ = socket.set_send_buffer_size(config.socket_buffer);
        socket.bind(&bind.into())?;
        socket.set_nonblocking(true)?;
        let socket = Arc::new(UdpSocket::from_std(socket.into())?);
        let waiting: Arc<Waiters> = Arc::default();
        let rng = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)));
        let stats: Arc<TransportStats> = Arc::default();
        let reader = tokio::spawn(read_datagrams(
            socket.clone(),
            waiting.clone(),
            rng.clone(),
            config.loss,
            stats.clone(),
        ));
        Ok(DatagramTransport {
            inner: Arc::new(DatagramInner {
                socket,
                waiting,
                next_nonce: AtomicU64::new(rand::random::<u64>() >> 1),
                config,
                rng,
                stats,
                rtt: Mutex::default(),
                reader,
            }),
        })
    }

    pub fn stats(&self) -> &TransportStats {
        &self.inner.stats
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.inner.socket.local_addr()
    }
}

async fn read_datagrams(
    socket: Arc<UdpSocket>,
    waiting: Arc<Waiters>,
    rng: Arc<Mutex<ChaCha8Rng>>,
    loss: f64,
    stats: Arc<TransportStats>,
) {
    let mut buf = vec![0u8; 65_536];
    loop {
        let Ok((n, _)) = socket.recv_from(&mut buf).await else {
            continue;
        };
        if lose(&rng, loss) {
            stats.dropped.fetch_add(1, Ordering::Relaxed);
            continue;
        }
        let Ok((nonce, message)) = decode_frame(&buf[..n]) else {
            continue;
        };
        let mut waiting = waiting.lock().unwrap();
        let Some(entry) = waiting.get_mut(&nonce) else {
            stats.duplicates.fetch_add(1, Ordering::Relaxed);
            continue;
        };
        let message = match message {
            WireMessage::Chunk(chunk) => match entry.chunks.add(chunk) {
                Ok(None) => continue,
                Ok(Some(frame)) => match decode_frame(&frame) {
                    Ok((_, m)) => m,
                    Err(e) => WireMessage::ErrorResponse(e),
                },
                Err(e) => WireMessage::ErrorResponse(e),
            },
            m => m,
        };
        if let Some(entry) = waiting.remove(&nonce) {
            let _ = entry.reply.send(message);
        }
    }
}

impl RequestTransport for DatagramTransport {
    fn request(&self, to: SocketAddr, message: WireMessage) -> BoxFuture<'static, Result<WireMessage>> {
        let inner = self.inner.clone();
        async move {
            let nonce = inner.next_nonce.fetch_add(1, Ordering::Relaxed);
            let frame = encode_frame(nonce, &message);
            let (tx, mut rx) = oneshot::channel();
            inner.waiting.lock().unwrap().insert(
                nonce,
                Waiting {
                    reply: tx,
                    chunks: Reassembly::default(),
                },
            );
            let floor = inner.config.retry_interval;
            let mut wait = inner.rtt.lock().unwrap().timeout(floor);
            for attempt in 0..inner.config.max_attempts {
                if attempt > 0 {
                    inner.stats.retransmitted.fetch_add(1, Ordering::Relaxed);
                }
                inner.stats.sent.fetch_add(1, Ordering::Relaxed);
                if lose(&inner.rng, inner.config.loss) {
                    inner.stats.dropped.fetch_add(1, Ordering::Relaxed);
                } else {
                    let _ = inner.socket.send_to(&frame, to).await;
                }
                let sent = tokio::time::Instant::now();
                if let Ok(reply) = tokio::time::timeout(wait, &mut rx).await {
                    if attempt == 0 {
                        inner.rtt.lock().unwrap().sample(sent.elapsed());
                    }
                    return reply.map_err(|_| Error::Timeout);
                }
                wait = (wait * 2).min(MAX_BACKOFF.max(floor));
                if attempt == 0 {
                    inner.rtt.lock().unwrap().back_off(wait);
                }
            }
            inner.waiting.lock().unwrap().remove(&nonce);
            inner.stats.timeouts.fetch_add(1, Ordering::Relaxed);
            Err(Error::Timeout)
        }
        .boxed()
    }
}

struct Connection {
    writer: tokio::sync::Mutex<tokio::net::tcp::OwnedWriteHalf>,
    waiting: Arc<Mutex<HashMap<u64, oneshot::Sender<WireMessage>>>>,
    reader: JoinHandle<()>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

/// Stream transport: one multiplexed TCP connection per endpoint, no chunking
/// and no retransmission. Used for bulk certificate downloads and deep
/// in-flight windows.
#[derive(Clone)]
pub struct StreamTransport {
    connections: Arc<tokio::sync::Mutex<HashMap<SocketAddr, Arc<Connection>>>>,
    next_nonce: Arc<AtomicU64>,
    timeout: Duration,
}

impl StreamTransport {
    pub fn new(timeout: Duration) -> Self {
        StreamTransport {
            connections: Arc::default(),
            next_nonce: Arc::new(AtomicU64::new(1)),
            timeout,
        }
    }

    async fn connection(&self, to: SocketAddr) -> Result<Arc<Connection>> {
        let mut connections = self.connections.lock().await;
        if let Some(c) = connections.get(&to) {
            if !c.reader.is_finished() {
                return Ok(c.clone());
            }
        }
        let stream = tokio::time::timeout(self.timeout, TcpStream::connect(to))
            .await
            .map_err(|_| Error::Timeout)?
            .map_err(|_| Error::Timeout)?;
        let _ = stream.set_nodelay(true);
        let (mut reader, writer) = stream.into_split();
        let waiting: Arc<Mutex<HashMap<u64, oneshot::Sender<WireMessage>>>> = Arc::default();
        let w = waiting.clone();
        let reader = tokio::spawn(async move {
            while let Ok(frame) = read_frame(&mut reader).await {
                if let Ok((nonce, message)) = decode_frame(&frame) {
                    if let Some(tx) = w.lock().unwrap().remove(&nonce) {
                        let _ = tx.send(message);
                    }
                }
            }
            w.lock().unwrap().clear();
        });
        let connection = Arc::new(Connection {
            writer: tokio::sync::Mutex::new(writer),
            waiting,
            reader,
        });
        connections.insert(to, connection.clone());
        Ok(connection)
    }
}

impl RequestTransport for StreamTransport {
    fn request(&self, to: SocketAddr, message: WireMessage) -> BoxFuture<'static, Result<WireMessage>> {
        let this = self.clone();
        async move {
            let connection = this.connection(to).await?;
            let nonce = this.next_nonce.fetch_add(1, Ordering::Relaxed);
            let (tx, rx) = oneshot::channel();
            connection.waiting.lock().unwrap().insert(nonce, tx);
            let frame = encode_frame(nonce, &message);
            if write_frame(&mut *connection.writer.lock().await, &frame)
                .await
                .is_err()
            {
                connection.waiting.lock().unwrap().remove(&nonce);
                this.connections.lock().await.remove(&to);
                return Err(Error::Timeout);
            }
            match tokio::time::timeout(this.timeout, rx).await {
                Ok(Ok(reply)) => Ok(reply),
                _ => {
                    connection.waiting.lock().unwrap().remove(&nonce);
                    Err(Error::Timeout)
                }
            }
        }
        .boxed()
    }
}

/// One authority reached over the network, one endpoint per shard.
pub struct RemoteAuthority {
    transport: Arc<dyn RequestTransport>,
    endpoints: Vec<SocketAddr>,
    shards: ShardAssignment,
}

impl RemoteAuthority {
    pub fn new(transport: Arc<dyn RequestTransport>, endpoints: Vec<SocketAddr>) -> Result<Self> {
        let shards = ShardAssignment::new(endpoints.len() as u32)?;
        Ok(RemoteAuthority {
            transport,
            endpoints,
            shards,
        })
    }

    pub fn endpoint_for(&self, address: &Address) -> SocketAddr {
        self.endpoints[self.shards.which_shard(address) as usize]
    }

    fn call<T: 'static>(
        &self,
        route: &Address,
        message: WireMessage,
        unpack: fn(WireMessage) -> Option<T>,
    ) -> LocalBoxFuture<'static, Result<T>> {
        let request = self.transport.request(self.endpoint_for(route), message);
        async move {
            match request.await? {
                WireMessage::ErrorResponse(e) => Err(e),
                m => {
                    let name = m.tag_name();
                    unpack(m).ok_or_else(|| {
                        Error::MalformedMessage(format!("unexpected response {name}"))
                    })
                }
            }
        }
        .boxed_local()
    }
}

impl AuthorityClient for RemoteAuthority {
    fn handle_transfer_order(&self, order: TransferOrder) -> LocalBoxFuture<'static, Result<SignedTransferOrder>> {
        let route = order.sender;
        self.call(&route, WireMessage::TransferOrderRequest(order), |m| match m {
            WireMessage::SignedOrderResponse(s) => Some(s),
            _ => None,
        })
    }

    fn handle_confirmation_order(
        &self,
        certificate: CertifiedTransfer,
    ) -> LocalBoxFuture<'static, Result<AccountInfoResponse>> {
        let route = certificate.sender();
        self.call(&route, WireMessage::ConfirmationRequest(certificate), |m| match m {
            WireMessage::AccountInfoResponse(i) => Some(i),
            _ => None,
        })
    }

    fn handle_account_info_query(&self, query: AccountInfoQuery) -> LocalBoxFuture<'static, Result<AccountInfoResponse>> {
        let route = query.address;
        self.call(&route, WireMessage::AccountInfoRequest(query), |m| match m {
            WireMessage::AccountInfoResponse(i) => Some(i),
            _ => None,
        })
    }

    fn handle_primary_sync_order(&self, route: Address, order: SignedSyncOrder) -> LocalBoxFuture<'static, Result<()>> {
        self.call(&route, WireMessage::PrimarySyncOrder(order), |m| match m {
            WireMessage::Ack => Some(()),
            _ => None,
        })
    }
}

pub struct TokioTimer;

impl Timer for TokioTimer {
    fn sleep(&self, duration: Duration) -> LocalBoxFuture<'static, ()> {
        tokio::time::sleep(duration).boxed_local()
    }
}

/// Sends raw bytes and waits for one reply datagram; for probing servers
/// with malformed input.
pub async fn raw_exchange(to: SocketAddr, bytes: &[u8], wait: Duration) -> Result<(u64, WireMessage)> {
    let socket = UdpSocket::bind("127.0.0.1:0").await.map_err(|e| Error::Storage(e.to_string()))?;
    socket.send_to(bytes, to).await.map_err(|e| Error::Storage(e.to_string()))?;
    let mut buf = vec![0u8; 65_536];
    let (n, _) = tokio::time::timeout(wait, socket.recv_from(&mut buf))
        .await
        .map_err(|_| Error::Timeout)?
        .map_err(|e| Error::Storage(e.to_string()))?;
    decode_nonce(&buf[..n])?;
    decode_frame(&buf[..n])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_keeps_backed_off_wait_until_a_clean_sample() {
        let floor = Duration::from_millis(100);
        let mut e = RttEstimator::default();
        assert_eq!(e.timeout(floor), floor);
        e.back_off(Duration::from_millis(400));
        assert_eq!(e.timeout(floor), Duration::from_millis(400));
        // 300ms first sample: srtt 300, rttvar 150, timeout 300 + 600.
        e.sample(Duration::from_millis(300));
        assert_eq!(e.timeout(floor), Duration::from_millis(900));
        e.back_off(Duration::from_secs(60));
        assert_eq!(e.timeout(floor), MAX_BACKOFF);
    }
}
