//! URL normalization down to the registrable domain.

use url::Url;

/// Lowercased host with any leading `www.` removed.
pub fn normalized_host(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    let parsed = Url::parse(raw)
        .ok()
        .filter(|u| u.has_host())
        .or_else(|| Url::parse(&format!("http://{raw}")).ok())?;
    let host = parsed
        .host_str()?
        .trim_end_matches('.')
        .to_ascii_lowercase();
    let host = host.strip_prefix("www.").unwrap_or(&host);
    if host.is_empty() {
        None
    } else {
        Some(host.to_string())
    }
}

/// Registrable domain (public suffix plus one label) of a URL or bare host.
///
/// `https://edition.cnn.com/2020/03/x?y=1` and `cnn.com` both give
/// `cnn.com`; `https://www.bbc.co.uk/news` gives `bbc.co.uk`. Hosts without a
/// known suffix (IP addresses, `localhost`) fall back to the whole host.
pub fn registrable_domain(raw: &str) -> Option<String> {
    let host = normalized_host(raw)?;
    match psl::domain_str(&host) {
        Some(domain) => Some(domain.to_string()),
        None => Some(host),
    }
}
