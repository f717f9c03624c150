use parking_lot::Mutex;

use crate::wire::SystemInfo;

pub trait Sampler: Send + Sync {
    fn sample(&self) -> SystemInfo;
}

/// Always reports the same numbers.
pub struct FixedSampler(pub SystemInfo);

impl FixedSampler {
    pub fn new(cpu_percent: f64, memory_percent: f64) -> Self {
        FixedSampler(SystemInfo { cpu_percent, memory_percent, platform: platform_name().into() })
    }
}

impl Sampler for FixedSampler {
    fn sample(&self) -> SystemInfo {
        self.0.clone()
    }
}

pub fn platform_name() -> &'static str {
    match std::env::consts::OS {
        "linux" => "Linux",
        "macos" => "Darwin",
        "windows" => "Windows",
        other => other,
    }
}

/// Reads /proc. CPU is the busy share since the previous sample (0 on the
/// first); elsewhere both figures are 0.
#[derive(Default)]
pub struct HostSampler {
    prev: Mutex<Option<(u64, u64)>>,
}

fn cpu_counters() -> Option<(u64, u64)> {
    let stat = std::fs::read_to_string("/proc/stat").ok()?;
    let line = stat.lines().next()?.strip_prefix("cpu ")?;
    let fields: Vec<u64> = line.split_whitespace().filter_map(|f| f.parse().ok()).collect();
    let total: u64 = fields.iter().sum();
    // idle + iowait
    let idle = fields.get(3).copied().unwrap_or(0) + fields.get(4).copied().unwrap_or(0);
    Some((total - idle, total))
}

fn memory_percent() -> Option<f64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let field = |name: &str| -> Option<f64> {
        info.lines().find(|l| l.starts_with(name))?.split_whitespace().nth(1)?.parse().ok()
    };
    let total = field("MemTotal:")?;
    let avail = field("MemAvailable:")?;
    (total > 0.0).then(|| 100.0 * (total - avail) / total)
}

impl Sampler for HostSampler {
    fn sample(&self) -> SystemInfo {
        let now = cpu_counters();
        let prev = std::mem::replace(&mut *self.prev.lock(), now);
        let cpu = match (now, prev) {
            (Some((busy, total)), Some((pb, pt))) if total > pt => {
                100.0 * (busy.saturating_sub(pb)) as f64 / (total - pt) as f64
            }
            _ => 0.0,
        };
        SystemInfo {
            cpu_percent: round1(cpu.clamp(0.0, 100.0)),
            memory_percent: round1(memory_percent().unwrap_or(0.0).clamp(0.0, 100.0)),
            platform: platform_name().into(),
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_values_pass_through() {
        let s = FixedSampler::new(23.4, 67.2).sample();
        assert_eq!((s.cpu_percent, s.memory_percent), (23.4, 67.2));
    }

    #[test]
    fn host_sample_is_in_range() {
        let s = HostSampler::default();
        for _ in 0..2 {
            let info = s.sample();
            assert!((0.0..=100.0).contains(&info.cpu_percent));
            assert!((0.0..=100.0).contains(&info.memory_percent));
        }
    }
}
