fn main() {
    std::process::exit(stackscope::cli::run(std::env::args_os()));
}
