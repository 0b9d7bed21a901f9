fn main() {
    std::process::exit(convo_td::cli::run(std::env::args_os()));
}
