fn main() {
    std::process::exit(tempseg_cli::run(std::env::args_os()));
}
