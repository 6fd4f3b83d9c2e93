fn main() {
    std::process::exit(kglink_cli::run(std::env::args_os()));
}
