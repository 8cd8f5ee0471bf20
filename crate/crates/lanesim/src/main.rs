fn main() {
    // die quietly when stdout closes early, e.g. `lanesim print-config | head`
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(lanesim::cli::run(std::env::args_os()));
}
