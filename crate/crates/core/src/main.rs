fn main() {
    std::process::exit(convrisk::cli::dispatch(std::env::args_os()));
}
