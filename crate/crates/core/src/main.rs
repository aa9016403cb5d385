fn main() {
    std::process::exit(ada_ranker::cli::run(std::env::args_os()));
}
