fn main() {
    std::process::exit(elastoplast_cli::run_command(std::env::args_os()));
}
