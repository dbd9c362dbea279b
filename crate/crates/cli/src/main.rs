use std::process::ExitCode;

fn main() -> anyhow::Result<ExitCode> {
    let code = schmidt_tns_cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    Ok(ExitCode::from(code))
}
