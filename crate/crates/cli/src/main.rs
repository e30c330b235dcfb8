use clap::Parser;

fn main() -> anyhow::Result<()> {
    let cli = lcot_cli::Cli::parse();
    let summary = lcot_cli::run_command(&cli)?;
    println!("{summary}");
    Ok(())
}
