//! Process-wide logger that keeps every formatted record for inspection.

use std::sync::{Mutex, OnceLock};

struct Capture {
    lines: Mutex<Vec<String>>,
}

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }

    fn log(&self, record: &log::Record) {
        let line = format!("{} {} {}", record.level(), record.target(), record.args());
        self.lines.lock().expect("log lock").push(line);
    }

    fn flush(&self) {}
}

static CAPTURE: OnceLock<&'static Capture> = OnceLock::new();

/// Installs the capturing logger at trace level; later calls are no-ops.
pub fn install() {
    CAPTURE.get_or_init(|| {
        let c: &'static Capture = Box::leak(Box::new(Capture { lines: Mutex::new(Vec::new()) }));
        log::set_logger(c).expect("no other logger installed");
        log::set_max_level(log::LevelFilter::Trace);
        c
    });
}

/// Every line logged so far, by any thread.
pub fn lines() -> Vec<String> {
    CAPTURE.get().map(|c| c.lines.lock().expect("log lock").clone()).unwrap_or_default()
}
