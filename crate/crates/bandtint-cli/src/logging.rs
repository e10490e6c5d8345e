//! Stderr logging gated by BANDTINT_LOG={error,info,debug}; default info.
//! Data output never goes to stderr.

#[derive(PartialEq, PartialOrd, Clone, Copy)]
pub enum Level {
    Error = 0,
    Info = 1,
    Debug = 2,
}

pub fn threshold() -> Level {
    match std::env::var("BANDTINT_LOG").as_deref() {
        Ok("error") => Level::Error,
        Ok("debug") => Level::Debug,
        _ => Level::Info,
    }
}

pub fn log(level: Level, msg: std::fmt::Arguments<'_>) {
    if level <= threshold() {
        eprintln!("{msg}");
    }
}

macro_rules! info {
    ($($arg:tt)*) => {
        crate::logging::log(crate::logging::Level::Info, format_args!($($arg)*))
    };
}

macro_rules! debug {
    ($($arg:tt)*) => {
        crate::logging::log(crate::logging::Level::Debug, format_args!($($arg)*))
    };
}

pub(crate) use {debug, info};
