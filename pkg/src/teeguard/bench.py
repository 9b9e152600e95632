"""Micro-benchmark harness.

Reports counter throughput, attestation latency decomposition, and
approval-service load curves as orderings and ratios. Absolute numbers are
hardware-dependent and are printed, never asserted; the assertable facts
are the shapes: the platform counter's rate cap, the shield's advantage
over it, local-vs-delayed attestation ordering, saturation knees, and
latency growth with injected RTT.

Rates are computed over inter-increment spans ((n-1)/(t_last-t_first)) so
a rate-capped counter measures at its sustained rate.
"""

from __future__ import annotations

import base64
import csv
import io
import statistics
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import certs
from .channel import SecureChannel
from .crypto import DEFAULT_ENTROPY, SigningKeyPair
from .tee import PlatformCounter, QuotingAuthority, SimulatedPlatform, measure
from .volume import ShieldedVolume


def _timed_rate(fn, duration: float, max_ops: int | None = None) -> tuple[float, int]:
    """Run fn repeatedly for ~duration seconds; returns (rate, count)."""
    times = [time.perf_counter()]
    deadline = times[0] + duration
    while times[-1] < deadline and (max_ops is None or len(times) - 1 < max_ops):
        fn()
        times.append(time.perf_counter())
    n = len(times) - 1
    if n < 2:
        return float(n / max(times[-1] - times[0], 1e-9)), n
    return (n - 1) / (times[-1] - times[1] + (times[1] - times[0])), n


# ---------------------------------------------------------------------------
# Counters
# ---------------------------------------------------------------------------


@dataclass
class CounterBenchResult:
    platform_rate: float
    file_native_rate: float
    file_shielded_rate: float
    file_shielded_strict_rate: float
    counts: dict[str, int] = field(default_factory=dict)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["variant", "increments_per_second", "samples"])
        for name, rate in [
            ("platform", self.platform_rate),
            ("file-native", self.file_native_rate),
            ("file-shielded", self.file_shielded_rate),
            ("file-shielded-strict", self.file_shielded_strict_rate),
        ]:
            writer.writerow([name, f"{rate:.1f}", self.counts.get(name, "")])
        return out.getvalue()

    def summary(self) -> str:
        ratio = self.file_shielded_rate / max(self.platform_rate, 1e-9)
        return (
            f"platform counter:        {self.platform_rate:10.1f}/s\n"
            f"file counter (native):   {self.file_native_rate:10.1f}/s\n"
            f"file counter (shielded): {self.file_shielded_rate:10.1f}/s\n"
            f"  with tag pushes:       {self.file_shielded_strict_rate:10.1f}/s\n"
            f"shielded/platform ratio: {ratio:10.0f}x"
        )


def _native_counter_increment(path: Path) -> int:
    """Plain-file counter: open, read, add one, write back, close."""
    value = 0
    if path.exists():
        value = int.from_bytes(path.read_bytes(), "big")
    value += 1
    path.write_bytes(value.to_bytes(8, "big"))
    return value


def bench_counters(
    *,
    platform_counter: PlatformCounter,
    shielded_volume: ShieldedVolume,
    native_dir: Path,
    app_ctx=None,
    app_volume: str = "data",
    duration: float = 1.0,
    platform_duration: float = 1.0,
) -> CounterBenchResult:
    """Measure increments/s for the four counter variants.

    ``app_ctx`` (an attested ApplicationContext) enables the strict variant
    where every increment also pushes the volume tag to the service; when
    absent that variant reuses the shielded volume without pushes.
    """
    platform_rate, n_platform = _timed_rate(
        platform_counter.increment, platform_duration
    )
    native_path = Path(native_dir) / "counter.bin"
    native_rate, n_native = _timed_rate(
        lambda: _native_counter_increment(native_path), duration
    )
    shielded_rate, n_shielded = _timed_rate(
        lambda: shielded_volume.file_counter_increment("counter"), duration
    )
    if app_ctx is not None:
        strict_rate, n_strict = _timed_rate(
            lambda: app_ctx.file_counter_increment(app_volume, "counter"), duration
        )
        app_ctx.flush_pushes()
    else:
        strict_rate, n_strict = shielded_rate, n_shielded
    return CounterBenchResult(
        platform_rate=platform_rate,
        file_native_rate=native_rate,
        file_shielded_rate=shielded_rate,
        file_shielded_strict_rate=strict_rate,
        counts={
            "platform": n_platform,
            "file-native": n_native,
            "file-shielded": n_shielded,
            "file-shielded-strict": n_strict,
        },
    )


# ---------------------------------------------------------------------------
# Attestation
# ---------------------------------------------------------------------------


@dataclass
class AttestationSample:
    init_s: float  # key generation, report, transport cert, TLS handshake
    send_s: float  # writing the session request
    wait_s: float  # server-side verification until response headers
    receive_s: float  # reading and applying the configuration

    @property
    def total_s(self) -> float:
        return self.init_s + self.send_s + self.wait_s + self.receive_s


@dataclass
class AttestationBenchResult:
    samples: list[AttestationSample]
    injected_delay_s: float = 0.0
    throughput_by_parallelism: dict[int, float] = field(default_factory=dict)

    def mean_total_s(self) -> float:
        return statistics.fmean(s.total_s for s in self.samples)

    def ci95_total_s(self) -> tuple[float, float]:
        totals = [s.total_s for s in self.samples]
        mean = statistics.fmean(totals)
        if len(totals) < 2:
            return mean, mean
        half = 1.96 * statistics.stdev(totals) / (len(totals) ** 0.5)
        return mean - half, mean + half

    def phase_means_ms(self) -> dict[str, float]:
        return {
            "init": 1e3 * statistics.fmean(s.init_s for s in self.samples),
            "send": 1e3 * statistics.fmean(s.send_s for s in self.samples),
            "wait": 1e3 * statistics.fmean(s.wait_s for s in self.samples),
            "receive": 1e3 * statistics.fmean(s.receive_s for s in self.samples),
        }

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["init_ms", "send_ms", "wait_ms", "receive_ms", "total_ms"])
        for s in self.samples:
            writer.writerow(
                [f"{1e3 * v:.3f}" for v in (s.init_s, s.send_s, s.wait_s, s.receive_s, s.total_s)]
            )
        return out.getvalue()


class AttestClient:
    """One-shot session attestations against a live service, with timing."""

    def __init__(
        self,
        *,
        platform: SimulatedPlatform,
        qa: QuotingAuthority,
        address: tuple[str, int],
        ca_root_pem: bytes,
        policy_name: str,
        code: bytes,
        presented_tags: dict[str, str],
        injected_delay_s: float = 0.0,
        entropy=DEFAULT_ENTROPY,
    ):
        self.platform = platform
        self.qa = qa
        self.address = address
        self.ca_root_pem = ca_root_pem
        self.policy_name = policy_name
        self.code = code
        self.mre = measure(code)
        self.presented_tags = presented_tags
        self.injected_delay_s = injected_delay_s
        self.entropy = entropy

    def attest_once(self) -> AttestationSample:
        import http.client
        import json as _json

        t0 = time.perf_counter()
        ephemeral = SigningKeyPair.generate(self.entropy)
        report = self.qa.issue_report(
            self.platform.platform_id, self.mre, ephemeral.public
        )
        session_cert = self.qa.issue_session_certificate(
            self.platform.platform_id, self.mre, ephemeral.public
        )
        with tempfile.NamedTemporaryFile(suffix=".pem", delete=False) as f:
            f.write(certs.cert_to_pem(session_cert) + certs.key_to_pem(ephemeral))
            identity = f.name
        channel = SecureChannel(
            *self.address, client_identity=identity, server_ca_pem=self.ca_root_pem
        )
        try:
            channel.connect()
            t1 = time.perf_counter()
            body = _json.dumps(
                {
                    "policy": self.policy_name,
                    "report": base64.b64encode(report.encode()).decode(),
                    "volumes": self.presented_tags,
                }
            ).encode()
            if self.injected_delay_s:
                time.sleep(self.injected_delay_s / 2)
            conn = channel._conn
            conn.request(
                "POST", "/session", body=body, headers={"Content-Type": "application/json"}
            )
            t2 = time.perf_counter()
            response = conn.getresponse()
            t3 = time.perf_counter()
            payload = response.read()
            if self.injected_delay_s:
                time.sleep(self.injected_delay_s / 2)
            if response.status != 200:
                raise RuntimeError(f"attestation failed: {payload!r}")
            _json.loads(payload)  # apply/parse configuration
            t4 = time.perf_counter()
        finally:
            channel.close()
            Path(identity).unlink(missing_ok=True)
        return AttestationSample(
            init_s=t1 - t0, send_s=t2 - t1, wait_s=t3 - t2, receive_s=t4 - t3
        )


def bench_attestation(
    client: AttestClient,
    *,
    samples: int = 20,
    parallelism: tuple[int, ...] = (),
    parallel_duration: float = 1.0,
) -> AttestationBenchResult:
    measured = [client.attest_once() for _ in range(samples)]
    result = AttestationBenchResult(
        samples=measured, injected_delay_s=client.injected_delay_s
    )
    for n in parallelism:
        counter_lock = threading.Lock()
        done = {"n": 0}
        stop_at = time.perf_counter() + parallel_duration

        def worker():
            while time.perf_counter() < stop_at:
                client.attest_once()
                with counter_lock:
                    done["n"] += 1

        threads = [threading.Thread(target=worker) for _ in range(n)]
        start = time.perf_counter()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        elapsed = time.perf_counter() - start
        result.throughput_by_parallelism[n] = done["n"] / elapsed
    return result


# ---------------------------------------------------------------------------
# Approval service
# ---------------------------------------------------------------------------


@dataclass
class ApprovalLoadPoint:
    concurrency: int
    throughput_rps: float
    mean_latency_s: float
    p95_latency_s: float


@dataclass
class ApprovalBenchResult:
    points: list[ApprovalLoadPoint]
    latency_by_rtt: dict[float, float] = field(default_factory=dict)  # rtt -> mean s
    secure_channel: bool = True

    def knee_exists(self) -> bool:
        """True when throughput saturates while latency keeps rising."""
        if len(self.points) < 3:
            return False
        best = max(p.throughput_rps for p in self.points)
        last = self.points[-1]
        first = self.points[0]
        saturated = last.throughput_rps < best * 1.5
        latency_rose = last.mean_latency_s > first.mean_latency_s * 2
        return saturated and latency_rose

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["concurrency", "throughput_rps", "mean_latency_ms", "p95_latency_ms"])
        for p in self.points:
            writer.writerow(
                [p.concurrency, f"{p.throughput_rps:.1f}", f"{1e3 * p.mean_latency_s:.3f}", f"{1e3 * p.p95_latency_s:.3f}"]
            )
        return out.getvalue()


def bench_approval(
    *,
    url: str,
    client_identity: Path | str | None,
    concurrency_sweep: tuple[int, ...] = (1, 2, 4, 8, 16),
    duration: float = 1.0,
    injected_rtts: tuple[float, ...] = (),
    entropy=DEFAULT_ENTROPY,
) -> ApprovalBenchResult:
    """Closed-loop load sweep against one approval service.

    Each worker holds a persistent channel and issues uniquely-nonced
    approval requests as fast as the service answers; sweeping concurrency
    traces the throughput/latency curve until the knee.
    """
    import urllib.parse

    parsed = urllib.parse.urlsplit(url)
    host, port = parsed.hostname, parsed.port
    tls = parsed.scheme == "https"

    def one_request(channel: SecureChannel) -> float:
        nonce = entropy.random_bytes(16).hex()
        digest = entropy.random_bytes(32).hex()
        t0 = time.perf_counter()
        status, _body = channel.request_json(
            "POST", "/approve", {"policy": "bench", "digest": digest, "nonce": nonce}
        )
        if status != 200:
            raise RuntimeError(f"approval request failed: {status}")
        return time.perf_counter() - t0

    points: list[ApprovalLoadPoint] = []
    for concurrency in concurrency_sweep:
        latencies: list[float] = []
        lock = threading.Lock()
        stop_at = time.perf_counter() + duration

        def worker():
            channel = SecureChannel(
                host, port, client_identity=client_identity, tls=tls
            )
            try:
                while time.perf_counter() < stop_at:
                    lat = one_request(channel)
                    with lock:
                        latencies.append(lat)
            finally:
                channel.close()

        threads = [threading.Thread(target=worker) for _ in range(concurrency)]
        start = time.perf_counter()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        elapsed = time.perf_counter() - start
        if not latencies:
            continue
        latencies.sort()
        points.append(
            ApprovalLoadPoint(
                concurrency=concurrency,
                throughput_rps=len(latencies) / elapsed,
                mean_latency_s=statistics.fmean(latencies),
                p95_latency_s=latencies[int(0.95 * (len(latencies) - 1))],
            )
        )

    result = ApprovalBenchResult(points=points, secure_channel=tls)
    for rtt in injected_rtts:
        channel = SecureChannel(host, port, client_identity=client_identity, tls=tls)
        try:
            lats = []
            for _ in range(10):
                time.sleep(rtt / 2)
                lat = one_request(channel)
                time.sleep(rtt / 2)
                lats.append(lat + rtt)
            result.latency_by_rtt[rtt] = statistics.fmean(lats)
        finally:
            channel.close()
    return result
