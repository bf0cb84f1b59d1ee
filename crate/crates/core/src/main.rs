fn main() {
    std::process::exit(stc::cli::run(std::env::args_os()));
}
