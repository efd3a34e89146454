fn main() {
    std::process::exit(fgrlab_cli::dispatch(std::env::args_os()));
}
