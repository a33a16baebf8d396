use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Component, PowerSample, TelemetryError, TraceReplay};

pub const DEFAULT_RAPL_PATH: &str = "/sys/class/powercap/intel-rapl:0/energy_uj";

/// A stream of power samples on the per-run clock.
pub trait PowerSource: Send {
    fn interval_ms(&self) -> u64;

    /// Returns every sample due strictly before `now_ms`.
    fn poll(&mut self, now_ms: u64) -> Result<Vec<PowerSample<f64>>, TelemetryError>;

    /// True once a finite source has nothing left to yield.
    fn is_exhausted(&self) -> bool {
        false
    }

    fn describe(&self) -> String;
}

fn default_interval() -> u64 {
    1
}

fn default_cpu() -> Component {
    Component::Cpu
}

fn default_gpu() -> Component {
    Component::Gpu
}

/// Backend-specific parameters of a telemetry source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    TraceReplay {
        path: PathBuf,
        #[serde(default, rename = "loop")]
        looping: bool,
    },
    OsCpuCounter {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "default_cpu")]
        component: Component,
    },
    GpuCounter {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "default_gpu")]
        component: Component,
    },
    Constant {
        component: Component,
        watts: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySourceConfig {
    #[serde(flatten)]
    pub source: SourceConfig,
    #[serde(default = "default_interval")]
    pub sample_interval_ms: u64,
}

impl TelemetrySourceConfig {
    pub fn constant(component: Component, watts: f64, sample_interval_ms: u64) -> Self {
        Self {
            source: SourceConfig::Constant { component, watts },
            sample_interval_ms,
        }
    }

    pub fn trace(path: impl Into<PathBuf>, looping: bool, sample_interval_ms: u64) -> Self {
        Self {
            source: SourceConfig::TraceReplay {
                path: path.into(),
                looping,
            },
            sample_interval_ms,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.source {
            SourceConfig::TraceReplay { .. } => "trace_replay",
            SourceConfig::OsCpuCounter { .. } => "os_cpu_counter",
            SourceConfig::GpuCounter { .. } => "gpu_counter",
            SourceConfig::Constant { .. } => "constant",
        }
    }

    /// True for sources backed by a physical counter shared machine-wide.
    pub fn is_physical(&self) -> bool {
        matches!(
            self.source,
            SourceConfig::OsCpuCounter { .. } | SourceConfig::GpuCounter { .. }
        )
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        if self.sample_interval_ms == 0 {
            return Err(TelemetryError::ZeroInterval);
        }
        if let SourceConfig::Constant { watts, .. } = self.source {
            if !watts.is_finite() || watts < 0.0 {
                return Err(TelemetryError::InvalidParameter(format!(
                    "constant watts must be finite and >= 0, got {watts}"
                )));
            }
        }
        Ok(())
    }
}

/// Opens the configured source. Counter backends are probed here and report
/// [`TelemetryError::CounterUnavailable`] instead of ever yielding zeros.
pub fn open_source(config: &TelemetrySourceConfig) -> Result<Box<dyn PowerSource>, TelemetryError> {
    config.validate()?;
    let interval = config.sample_interval_ms;
    Ok(match &config.source {
        SourceConfig::TraceReplay { path, looping } => {
            Box::new(TraceReplay::open(path, interval, *looping)?)
        }
        SourceConfig::Constant { component, watts } => {
            Box::new(ConstantSource::new(*component, *watts, interval))
        }
        SourceConfig::OsCpuCounter { path, component } => {
            let path = path
                .clone()
                .unwrap_or_else(|| PathBuf::from(DEFAULT_RAPL_PATH));
            Box::new(RaplCounter::open(&path, *component, interval)?)
        }
        SourceConfig::GpuCounter { path, component } => {
            let path = match path {
                Some(p) => p.clone(),
                None => GpuHwmonCounter::discover().ok_or_else(|| {
                    TelemetryError::CounterUnavailable(
                        "no GPU hwmon power sensor under /sys/class/drm".into(),
                    )
                })?,
            };
            Box::new(GpuHwmonCounter::open(&path, *component, interval)?)
        }
    })
}

/// Emits a fixed wattage every `interval_ms`, starting at t = 0.
#[derive(Debug, Clone)]
pub struct ConstantSource {
    component: Component,
    watts: f64,
    interval_ms: u64,
    next_ms: u64,
}

impl ConstantSource {
    pub fn new(component: Component, watts: f64, interval_ms: u64) -> Self {
        Self {
            component,
            watts,
            interval_ms: interval_ms.max(1),
            next_ms: 0,
        }
    }
}

impl PowerSource for ConstantSource {
    fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    fn poll(&mut self, now_ms: u64) -> Result<Vec<PowerSample<f64>>, TelemetryError> {
        let mut out = Vec::new();
        while self.next_ms < now_ms {
            out.push(PowerSample::new(self.next_ms, self.component, self.watts));
            self.next_ms += self.interval_ms;
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("constant({} {} W)", self.component, self.watts)
    }
}

fn read_u64(path: &Path) -> Result<u64, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.trim().parse().map_err(|e| {
        format!(
            "{}: unparsable counter {:?}: {e}",
            path.display(),
            text.trim()
        )
    })
}

/// Cumulative energy counter exposed by the Linux powercap (RAPL) interface.
/// Power is derived from the counter delta between consecutive reads.
#[derive(Debug)]
pub struct RaplCounter {
    path: PathBuf,
    component: Component,
    interval_ms: u64,
    max_range_uj: Option<u64>,
    last: Option<(u64, Instant)>,
    next_ms: u64,
}

impl RaplCounter {
    pub fn open(
        path: &Path,
        component: Component,
        interval_ms: u64,
    ) -> Result<Self, TelemetryError> {
        let first = read_u64(path).map_err(TelemetryError::CounterUnavailable)?;
        let max_range_uj = path
            .parent()
            .map(|dir| dir.join("max_energy_range_uj"))
            .and_then(|p| read_u64(&p).ok());
        Ok(Self {
            path: path.to_path_buf(),
            component,
            interval_ms: interval_ms.max(1),
            max_range_uj,
            last: Some((first, Instant::now())),
            next_ms: 0,
        })
    }
}

impl PowerSource for RaplCounter {
    fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    fn poll(&mut self, now_ms: u64) -> Result<Vec<PowerSample<f64>>, TelemetryError> {
        if now_ms < self.next_ms {
            return Ok(Vec::new());
        }
        self.next_ms = now_ms + self.interval_ms;
        let reading = read_u64(&self.path).map_err(TelemetryError::CounterRead)?;
        let at = Instant::now();
        let mut out = Vec::new();
        if let Some((prev, prev_at)) = self.last {
            let delta_uj = if reading >= prev {
                reading - prev
            } else {
                // counter wrapped
                self.max_range_uj.map_or(0, |max| max - prev + reading)
            };
            let secs = at.duration_since(prev_at).as_secs_f64();
            if secs > 0.0 {
                out.push(PowerSample::new(
                    now_ms,
                    self.component,
                    delta_uj as f64 / 1e6 / secs,
                ));
            }
        }
        self.last = Some((reading, at));
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("os_cpu_counter({})", self.path.display())
    }
}

/// Instantaneous GPU power from a hwmon `power1_average`/`power1_input`
/// file (microwatts), as exposed by amdgpu and similar drivers.
#[derive(Debug)]
pub struct GpuHwmonCounter {
    path: PathBuf,
    component: Component,
    interval_ms: u64,
    next_ms: u64,
}

impl GpuHwmonCounter {
    pub fn discover() -> Option<PathBuf> {
        let cards = fs::read_dir("/sys/class/drm").ok()?;
        for card in cards.flatten() {
            let hwmon_dir = card.path().join("device/hwmon");
            let Ok(hwmons) = fs::read_dir(&hwmon_dir) else {
                continue;
            };
            for hwmon in hwmons.flatten() {
                for name in ["power1_average", "power1_input"] {
                    let candidate = hwmon.path().join(name);
                    if read_u64(&candidate).is_ok() {
                        return Some(candidate);
                    }
                }
            }
        }
        None
    }

    pub fn open(
        path: &Path,
        component: Component,
        interval_ms: u64,
    ) -> Result<Self, TelemetryError> {
        read_u64(path).map_err(TelemetryError::CounterUnavailable)?;
        Ok(Self {
            path: path.to_path_buf(),
            component,
            interval_ms: interval_ms.max(1),
            next_ms: 0,
        })
    }
}

impl PowerSource for GpuHwmonCounter {
    fn interval_ms(&self) -> u64 {
        self.interval_ms
    }

    fn poll(&mut self, now_ms: u64) -> Result<Vec<PowerSample<f64>>, TelemetryError> {
        if now_ms < self.next_ms {
            return Ok(Vec::new());
        }
        self.next_ms = now_ms + self.interval_ms;
        let microwatts = read_u64(&self.path).map_err(TelemetryError::CounterRead)?;
        Ok(vec![PowerSample::new(
            now_ms,
            self.component,
            microwatts as f64 / 1e6,
        )])
    }

    fn describe(&self) -> String {
        format!("gpu_counter({})", self.path.display())
    }
}

/// Messages delivered by a sampling pump.
#[derive(Debug)]
pub enum PumpEvent {
    Samples(Vec<PowerSample<f64>>),
    Failed(String),
    Exhausted,
}

pub struct PumpHandle {
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl PumpHandle {
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for PumpHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Samples `source` on a background thread at its own interval, measured on
/// the clock that started at `start`. `sink` returns `false` to stop early.
pub fn spawn_pump<F>(mut source: Box<dyn PowerSource>, start: Instant, mut sink: F) -> PumpHandle
where
    F: FnMut(PumpEvent) -> bool + Send + 'static,
{
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let interval = Duration::from_millis(source.interval_ms().max(1));
    let join = thread::spawn(move || {
        let mut next = start;
        while !flag.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now < next {
                thread::sleep(next - now);
            }
            next += interval;
            let now_ms = start.elapsed().as_millis() as u64;
            match source.poll(now_ms + 1) {
                Ok(samples) if samples.is_empty() => {}
                Ok(samples) => {
                    if !sink(PumpEvent::Samples(samples)) {
                        return;
                    }
                }
                Err(e) => {
                    sink(PumpEvent::Failed(format!("{}: {e}", source.describe())));
                    return;
                }
            }
            if source.is_exhausted() {
                sink(PumpEvent::Exhausted);
                return;
            }
        }
    });
    PumpHandle {
        stop,
        join: Some(join),
    }
}
