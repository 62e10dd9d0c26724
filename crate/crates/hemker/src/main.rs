fn main() {
    std::process::exit(hemker::run_cli());
}
