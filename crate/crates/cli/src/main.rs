fn main() {
    std::process::exit(efedsim_cli::run(std::env::args_os()));
}
