fn main() {
    std::process::exit(logconcure_cli::run(std::env::args_os()));
}
