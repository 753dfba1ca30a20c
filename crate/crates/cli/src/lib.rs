//! The `splatfix` pipeline behind the command line: configuration, argument
//! parsing, subcommands and exit-code mapping.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;
pub mod logging;

use std::process::ExitCode;

pub use config::{Config, UsageError};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_BAD_INPUT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// Exit code for an error: usage problems, numerical aborts, everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() || cause.downcast_ref::<clap::Error>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(splatfix_restore::Error::NonFinite { .. }) = cause.downcast_ref::<splatfix_restore::Error>() {
            return EXIT_NUMERICAL;
        }
        if let Some(splatfix_core::Error::NonFinite(_)) = cause.downcast_ref::<splatfix_core::Error>() {
            return EXIT_NUMERICAL;
        }
        if let Some(splatfix_restore::Error::Core(splatfix_core::Error::NonFinite(_))) = cause.downcast_ref::<splatfix_restore::Error>() {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_BAD_INPUT
}

/// Applies `threads`: 1 selects the sequential path, larger values size the
/// global pool, 0 keeps the default.
pub fn configure_threads(threads: usize) -> anyhow::Result<()> {
    diffeng::par::set_sequential(threads == 1);
    #[cfg(feature = "parallel")]
    if threads > 1 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

/// Parses `args`, runs the subcommand and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let inv = match args::parse_from(args) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    logging::init();
    let result = config::resolve(inv.cli.command.common().config.as_deref(), &inv.overrides).and_then(|cfg| {
        configure_threads(cfg.threads)?;
        log::info!("{} (seed {}, threads {})", inv.cli.command.name(), cfg.seed, cfg.threads);
        commands::run(&inv.cli.command, &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let usage = anyhow::Error::new(UsageError("bad flag".into()));
        assert_eq!(exit_code(&usage), EXIT_USAGE);
        let nan = anyhow::Error::new(splatfix_restore::Error::NonFinite { step: 3, detail: "{}".into() });
        assert_eq!(exit_code(&nan.context("training")), EXIT_NUMERICAL);
        let core_nan = anyhow::Error::new(splatfix_core::Error::NonFinite("loss".into()));
        assert_eq!(exit_code(&core_nan), EXIT_NUMERICAL);
        let io = anyhow::Error::new(std::io::Error::other("missing"));
        assert_eq!(exit_code(&io), EXIT_BAD_INPUT);
    }
}
