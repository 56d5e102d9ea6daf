#pragma once

// Graph archive: the sequence of thresholded correlation graphs written by
// `flagcrash graphs`.
//
// Little-endian layout:
//
//   header   magic "FCGA" (4 bytes) | version u32 = 1 | kind u32 (0 pearson, 1 ccm) | record count u64
//   record   as_of u32 (YYYYMMDD) | n_vertices u32 | edge_count u64 | edge_count x edge
//   edge     source u32 | target u32 | weight f64
//
// A JSON sidecar `<archive>.json` records window, correlation kind, CCM
// parameters and the ticker list.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flagcrash/binary_io.hpp"
#include "flagcrash/corrnet.hpp"
#include "flagcrash/text.hpp"

namespace flagcrash {

struct GraphArchive {
    CorrKind kind = CorrKind::ccm;
    std::size_t window = 25;
    CcmParams ccm;
    std::vector<std::string> tickers;
    std::vector<WeightedDigraph> graphs;
};

inline constexpr std::string_view kGraphArchiveMagic = "FCGA";
inline constexpr std::uint32_t kGraphArchiveVersion = 1;

inline std::string encode_graphs(CorrKind kind, const std::vector<WeightedDigraph>& graphs) {
    binary::Writer w;
    w.bytes(kGraphArchiveMagic);
    w.u32(kGraphArchiveVersion);
    w.u32(kind == CorrKind::pearson ? 0u : 1u);
    w.u64(graphs.size());
    for (const auto& g : graphs) {
        w.u32(g.as_of.packed());
        w.u32(static_cast<std::uint32_t>(g.n_vertices));
        w.u64(g.edges.size());
        for (const auto& e : g.edges) {
            w.u32(static_cast<std::uint32_t>(e.source));
            w.u32(static_cast<std::uint32_t>(e.target));
            w.f64(e.weight);
        }
    }
    return w.data();
}

inline std::pair<CorrKind, std::vector<WeightedDigraph>> decode_graphs(std::string_view bytes) {
    binary::Reader r(bytes);
    if (r.bytes(4) != kGraphArchiveMagic) throw ParseError("not a graph archive (bad magic)");
    if (const auto v = r.u32(); v != kGraphArchiveVersion) throw ParseError("unsupported graph archive version " + std::to_string(v));
    const auto kind_code = r.u32();
    if (kind_code > 1) throw ParseError("unknown correlation kind code " + std::to_string(kind_code));
    const CorrKind kind = kind_code == 0 ? CorrKind::pearson : CorrKind::ccm;
    const auto count = r.u64();
    std::vector<WeightedDigraph> graphs;
    for (std::uint64_t i = 0; i < count; ++i) {
        WeightedDigraph g;
        g.as_of = Date::from_packed(r.u32());
        g.n_vertices = r.u32();
        const auto m = r.u64();
        for (std::uint64_t k = 0; k < m; ++k) {
            Edge e;
            e.source = r.u32();
            e.target = r.u32();
            e.weight = r.f64();
            if (e.source >= g.n_vertices || e.target >= g.n_vertices || e.source == e.target || !(e.weight > 0.0 && e.weight <= 1.0))
                throw ParseError("invalid edge in record " + std::to_string(i));
            g.edges.push_back(e);
        }
        graphs.push_back(std::move(g));
    }
    if (!r.done()) throw ParseError("trailing bytes after graph archive");
    return {kind, std::move(graphs)};
}

inline nlohmann::json archive_sidecar(const GraphArchive& a) {
    return {
        {"format", "flagcrash-graph-archive"},
        {"version", kGraphArchiveVersion},
        {"corr", to_string(a.kind)},
        {"window", a.window},
        {"ccm_e", a.ccm.embedding_dim},
        {"ccm_tau", a.ccm.lag},
        {"tickers", a.tickers},
        {"records", a.graphs.size()},
    };
}

inline void write_graph_archive(const std::string& path, const GraphArchive& a) {
    text::write_file(path, encode_graphs(a.kind, a.graphs));
    text::write_file(path + ".json", archive_sidecar(a).dump(2) + "\n");
}

// The sidecar is optional; without it only kind and graphs are recovered.
inline GraphArchive read_graph_archive(const std::string& path) {
    GraphArchive a;
    auto [kind, graphs] = decode_graphs(text::read_file(path));
    a.kind = kind;
    a.graphs = std::move(graphs);
    std::string sidecar;
    try {
        sidecar = text::read_file(path + ".json");
    } catch (const DataError&) {
        return a;
    }
    try {
        const auto j = nlohmann::json::parse(sidecar);
        a.window = j.value("window", a.window);
        a.ccm.embedding_dim = j.value("ccm_e", a.ccm.embedding_dim);
        a.ccm.lag = j.value("ccm_tau", a.ccm.lag);
        a.tickers = j.value("tickers", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad graph archive sidecar: " + std::string(e.what()));
    }
    return a;
}

}  // namespace flagcrash
