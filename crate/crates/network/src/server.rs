// SPDX-License-Identifier: Apache-2.0

//! Per-shard server. [`ShardCore`] maps request frames to reply frames and
//! internal envelopes without I/O; [`spawn_shard`] runs one on its own thread
//! behind a UDP socket and a TCP listener sharing the shard's port.

use crate::channel::{ChannelKey, Inbox, Outbox};
use crate::framing::{datagrams, read_frame, write_frame};
use quorumpay_core::audit::ShardDump;
use quorumpay_core::authority::{AuthorityState, SyncInbox};
use quorumpay_core::base::{PublicKeyBytes, ShardId};
use quorumpay_core::protocol::{decode_frame, decode_nonce, encode_frame, WireMessage};
use quorumpay_core::Error;
use std::collections::BTreeMap;
use std::io;
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::{mpsc, oneshot};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ShardStats {
    pub requests: u64,
    pub error_responses: u64,
    pub malformed: u64,
    pub cross_shard_sent: u64,
    pub cross_shard_applied: u64,
    pub rejected_envelopes: u64,
}

/// Frames produced by one input.
#[derive(Debug, Default)]
pub struct Outputs {
    /// Reply to the sender of the input.
    pub replies: Vec<Vec<u8>>,
    /// Frames for other shards of this authority.
    pub internal: Vec<(ShardId, Vec<u8>)>,
}

pub struct ShardCore {
    state: AuthorityState,
    sync: SyncInbox,
    outboxes: BTreeMap<ShardId, Outbox>,
    inboxes: BTreeMap<ShardId, Inbox>,
    stats: ShardStats,
}

impl ShardCore {
    pub fn new(state: AuthorityState, primary: PublicKeyBytes, key: ChannelKey) -> Self {
        let me = state.shard_id();
        let others: Vec<ShardId> = state.shards().shards().filter(|s| *s != me).collect();
        ShardCore {
            outboxes: others
                .iter()
                .map(|&d| (d, Outbox::new(key.clone(), me, d)))
                .collect(),
            inboxes: others
                .iter()
                .map(|&s| (s, Inbox::new(key.clone(), s, me)))
                .collect(),
            state,
            sync: SyncInbox::new(primary),
            stats: ShardStats::default(),
        }
    }

    pub fn state(&self) -> &AuthorityState {
        &self.state
    }

    pub fn stats(&self) -> ShardStats {
        let mut stats = self.stats;
        stats.rejected_envelopes = self.inboxes.values().map(|i| i.rejected).sum();
        stats
    }

    pub fn dump(&self) -> ShardDump {
        ShardDump::from_state(&self.state)
    }

    /// True when every cross-shard update sent has been acknowledged.
    pub fn is_quiescent(&self) -> bool {
        self.outboxes.values().all(Outbox::is_idle)
    }

    pub fn handle(&mut self, bytes: &[u8]) -> Outputs {
        let mut out = Outputs::default();
        let nonce = match decode_nonce(bytes) {
            Ok(n) => n,
            Err(e) => {
                self.stats.malformed += 1;
                self.stats.error_responses += 1;
                out.replies.push(encode_frame(0, &WireMessage::ErrorResponse(e)));
                return out;
            }
        };
        let message = match decode_frame(bytes) {
            Ok((_, m)) => m,
            Err(e) => {
                self.stats.malformed += 1;
                self.reply(&mut out, nonce, Err(e));
                return out;
            }
        };
        self.stats.requests += 1;
        let reply = match message {
            WireMessage::TransferOrderRequest(order) => self
                .state
                .handle_transfer_order(order)
                .map(WireMessage::SignedOrderResponse),
            WireMessage::ConfirmationRequest(cert) => {
                self.state.handle_confirmation_order(cert).map(|(info, update)| {
                    if let Some(update) = update {
                        self.send_internal(
                            &mut out,
                            update.shard_id,
                            WireMessage::CrossShardCommit(update.certificate),
                        );
                    }
                    WireMessage::AccountInfoResponse(info)
                })
            }
            WireMessage::AccountInfoRequest(query) => self
                .state
                .handle_account_info_query(&query)
                .map(WireMessage::AccountInfoResponse),
            WireMessage::PrimarySyncOrder(signed) => self
                .sync
                .offer(&mut self.state, &signed)
                .map(|()| WireMessage::Ack),
            WireMessage::InterShard(envelope) => {
                self.receive_internal(&mut out, &envelope);
                return out;
            }
            WireMessage::InterShardAck(ack) => {
                if let Some(outbox) = self.outboxes.get_mut(&ack.destination) {
                    outbox.acknowledge(&ack);
                }
                return out;
            }
            // Cross-shard commits are accepted only inside envelopes.
            WireMessage::CrossShardCommit(_) => Err(Error::MalformedMessage(
                "cross-shard commits travel on the internal channel".into(),
            )),
            other => Err(Error::MalformedMessage(format!(
                "{} is not a request",
                other.tag_name()
            ))),
        };
        self.reply(&mut out, nonce, reply);
        out
    }

    fn reply(&mut self, out: &mut Outputs, nonce: u64, reply: Result<WireMessage, Error>) {
        let message = reply.unwrap_or_else(|e| {
            self.stats.error_responses += 1;
            WireMessage::ErrorResponse(e)
        });
        out.replies.push(encode_frame(nonce, &message));
    }

    fn send_internal(&mut self, out: &mut Outputs, destination: ShardId, message: WireMessage) {
        let Some(outbox) = self.outboxes.get_mut(&destination) else {
            log::error!("no channel to shard {destination}");
            return;
        };
        let envelope = outbox.send(message.to_payload_bytes());
        self.stats.cross_shard_sent += 1;
        out.internal
            .push((destination, encode_frame(0, &WireMessage::InterShard(envelope))));
    }

    fn receive_internal(&mut self, out: &mut Outputs, envelope: &quorumpay_core::protocol::InterShardEnvelope) {
        let Some(inbox) = self.inboxes.get_mut(&envelope.source) else {
            return;
        };
        let (payloads, ack) = inbox.receive(envelope);
        if let Some(ack) = ack {
            out.internal
                .push((envelope.source, encode_frame(0, &WireMessage::InterShardAck(ack))));
        }
        for payload in payloads {
            match WireMessage::from_payload_bytes(&payload) {
                Ok(WireMessage::CrossShardCommit(cert)) => {
                    match self.state.handle_cross_shard_commit(cert) {
                        Ok(()) => self.stats.cross_shard_applied += 1,
                        Err(e) => log::warn!("cross-shard commit refused: {e}"),
                    }
                }
                Ok(other) => log::warn!("unexpected {} on internal channel", other.tag_name()),
                Err(e) => log::warn!("undecodable internal payload: {e}"),
            }
        }
    }

    /// Envelopes still awaiting acknowledgement.
    pub fn retransmissions(&self) -> Vec<(ShardId, Vec<u8>)> {
        self.outboxes
            .iter()
            .flat_map(|(&d, o)| {
                o.unacknowledged()
                    .map(move |e| (d, encode_frame(0, &WireMessage::InterShard(e.clone()))))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    /// Period of inter-shard retransmission.
    pub retransmit_interval: Duration,
    /// Requested kernel buffer size for the UDP socket.
    pub socket_buffer: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            retransmit_interval: Duration::from_millis(50),
            socket_buffer: 8 << 20,
        }
    }
}

/// Bound but not yet running sockets for one shard.
pub struct ShardSockets {
    udp: std::net::UdpSocket,
    tcp: std::net::TcpListener,
}

impl ShardSockets {
    pub fn bind(address: SocketAddr, config: &ServerConfig) -> io::Result<Self> {
        use socket2::{Domain, Protocol, Socket, Type};
        let domain = Domain::for_address(address);
        let udp = Socket::new(domain, Type::DGRAM, Some(Protocol::UDP))?;
        let _ = udp.set_recv_buffer_size(config.socket_buffer);
        let _ = udp.set_send_buffer_size(config.socket_buffer);
        udp.bind(&address.into())?;
        udp.set_nonblocking(true)?;
        let tcp = Socket::new(domain, Type::STREAM, Some(Protocol::TCP))?;
        tcp.set_reuse_address(true)?;
        tcp.bind(&address.into())?;
        tcp.listen(1024)?;
        tcp.set_nonblocking(true)?;
        Ok(ShardSockets {
            udp: udp.into(),
            tcp: tcp.into(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.udp.local_addr()
    }
}

/// Binds shards `0..count` on `base_port + s`. Port 0 picks a free range.
pub fn bind_shards(
    host: IpAddr,
    base_port: u16,
    count: u32,
    config: &ServerConfig,
) -> io::Result<Vec<ShardSockets>> {
    if base_port != 0 {
        return (0..count)
            .map(|s| ShardSockets::bind(SocketAddr::new(host, base_port + s as u16), config))
            .collect();
    }
    let mut last_error = None;
    for _ in 0..64 {
        let base = rand::random::<u16>() % 30_000 + 20_000;
        match bind_shards(host, base, count, config) {
            Ok(sockets) => return Ok(sockets),
            Err(e) => last_error = Some(e),
        }
    }
    Err(last_error.unwrap_or_else(|| io::ErrorKind::AddrInUse.into()))
}

enum Control {
    Dump(oneshot::Sender<(ShardDump, ShardStats, bool)>),
    Shutdown,
}

/// Handle to a shard server thread. Dropping it stops the server.
pub struct ShardHandle {
    address: SocketAddr,
    crashed: Arc<AtomicBool>,
    control: mpsc::UnboundedSender<Control>,
    thread: Option<JoinHandle<()>>,
}

impl ShardHandle {
    pub fn address(&self) -> SocketAddr {
        self.address
    }

    /// A crashed shard silently drops every datagram and connection.
    pub fn set_crashed(&self, crashed: bool) {
        self.crashed.store(crashed, Ordering::SeqCst);
    }

    /// Dump, statistics and whether all cross-shard updates were acked.
    pub async fn inspect(&self) -> Option<(ShardDump, ShardStats, bool)> {
        let (tx, rx) = oneshot::channel();
        self.control.send(Control::Dump(tx)).ok()?;
        rx.await.ok()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.control.send(Control::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ShardHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Runs `core` on a dedicated thread. `peers[d]` is shard `d` of the same
/// authority.
pub fn spawn_shard(
    core: ShardCore,
    sockets: ShardSockets,
    peers: Vec<SocketAddr>,
    config: ServerConfig,
) -> io::Result<ShardHandle> {
    let address = sockets.local_addr()?;
    let crashed = Arc::new(AtomicBool::new(false));
    let (control, control_rx) = mpsc::unbounded_channel();
    let flag = crashed.clone();
    let thread = std::thread::Builder::new()
        .name(format!("shard-{}", core.state().shard_id()))
        .spawn(move || {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("runtime");
            let local = tokio::task::LocalSet::new();
            local.block_on(&runtime, run(core, sockets, peers, config, flag, control_rx));
        })?;
    Ok(ShardHandle {
        address,
        crashed,
        control,
        thread: Some(thread),
    })
}

struct StreamRequest {
    frame: Vec<u8>,
    reply: mpsc::UnboundedSender<Vec<u8>>,
}

async fn run(
    mut core: ShardCore,
    sockets: ShardSockets,
    peers: Vec<SocketAddr>,
    config: ServerConfig,
    crashed: Arc<AtomicBool>,
    mut control: mpsc::UnboundedReceiver<Control>,
) {
    let udp = UdpSocket::from_std(sockets.udp).expect("udp socket");
    let tcp = TcpListener::from_std(sockets.tcp).expect("tcp listener");
    let (stream_tx, mut stream_rx) = mpsc::unbounded_channel::<StreamRequest>();
    let mut tick = tokio::time::interval(config.retransmit_interval);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut buf = vec![0u8; 65_536];
    loop {
        tokio::select! {
            received = udp.recv_from(&mut buf) => {
                let Ok((n, from)) = received else { continue };
                if crashed.load(Ordering::Relaxed) {
                    continue;
                }
                let outputs = core.handle(&buf[..n]);
                for reply in outputs.replies {
                    let nonce = decode_nonce(&reply).unwrap_or(0);
                    for d in datagrams(nonce, reply) {
                        let _ = udp.send_to(&d, from).await;
                    }
                }
                send_internal(&udp, &peers, outputs.internal).await;
            }
            Some(request) = stream_rx.recv() => {
                if crashed.load(Ordering::Relaxed) {
                    continue;
                }
                let outputs = core.handle(&request.frame);
                for reply in outputs.replies {
                    let _ = request.reply.send(reply);
                }
                send_internal(&udp, &peers, outputs.internal).await;
            }
            accepted = tcp.accept() => {
                if let Ok((stream, _)) = accepted {
                    let _ = stream.set_nodelay(true);
                    tokio::task::spawn_local(serve_stream(stream, stream_tx.clone(), crashed.clone()));
                }
            }
            _ = tick.tick() => {
                if !crashed.load(Ordering::Relaxed) {
                    send_internal(&udp, &peers, core.retransmissions()).await;
                }
            }
            command = control.recv() => match command {
                Some(Control::Dump(reply)) => {
                    let _ = reply.send((core.dump(), core.stats(), core.is_quiescent()));
                }
                Some(Control::Shutdown) | None => break,
            },
        }
    }
}

async fn send_internal(udp: &UdpSocket, peers: &[SocketAddr], frames: Vec<(ShardId, Vec<u8>)>) {
    for (shard, frame) in frames {
        if let Some(peer) = peers.get(shard as usize) {
            let _ = udp.send_to(&frame, peer).await;
        }
    }
}

async fn serve_stream(
    stream: TcpStream,
    requests: mpsc::UnboundedSender<StreamRequest>,
    crashed: Arc<AtomicBool>,
) {
    let (mut reader, mut writer) = stream.into_split();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<Vec<u8>>();
    let writer_task = tokio::task::spawn_local(async move {
        while let Some(frame) = reply_rx.recv().await {
            if write_frame(&mut writer, &frame).await.is_err() {
                break;
            }
        }
    });
    while let Ok(frame) = read_frame(&mut reader).await {
        if crashed.load(Ordering::Relaxed) {
            continue;
        }
        if requests
            .send(StreamRequest {
                frame,
                reply: reply_tx.clone(),
            })
            .is_err()
        {
            break;
        }
    }
    drop(reply_tx);
    let _ = writer_task.await;
}
