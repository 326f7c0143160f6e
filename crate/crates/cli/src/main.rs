fn main() {
    std::process::exit(genport_cli::run(std::env::args_os()));
}
