#include "viewsel/selection_search.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "parallel.hpp"
#include "viewsel/errors.hpp"
#include "viewsel/random.hpp"

namespace viewsel {

namespace {

constexpr std::uint64_t kCandidateDrawStream = 21;

}  // namespace

std::vector<NamedSelection> structured_baselines(SelectionMode mode, std::size_t levels,
                                                 std::size_t views) {
  std::vector<NamedSelection> out;
  if (mode == SelectionMode::vector) {
    out.push_back({"all views", structured_pattern(PatternKind::all, views)});
    out.push_back({"every 2nd view", structured_pattern(PatternKind::stride, views, 2)});
    out.push_back({"every 4th view", structured_pattern(PatternKind::stride, views, 4)});
    out.push_back({"first view", structured_pattern(PatternKind::first_only, views)});
    return out;
  }
  out.push_back({"all views", structured_matrix(1, 0, levels, views)});
  out.push_back({"every 2nd view, shift 1", structured_matrix(2, 1, levels, views)});
  out.push_back({"every 3rd view, shift 1", structured_matrix(3, 1, levels, views)});
  out.push_back({"every 6th view, shift 1", structured_matrix(6, 1, levels, views)});
  out.push_back({"every 12th view, shift 2", structured_matrix(12, 2, levels, views)});
  return out;
}

double SearchConfig::effective_density() const {
  if (density) return *density;
  return mode == SelectionMode::vector ? 0.25 : 0.10;
}

std::size_t SearchConfig::effective_epochs() const {
  if (epochs) return *epochs;
  return mode == SelectionMode::vector ? kVectorEpochs : kMatrixEpochs;
}

void SearchConfig::validate() const {
  if (n_candidates == 0 && !include_baselines) {
    throw ConfigError("search: no candidates to evaluate");
  }
  const double p = effective_density();
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("search: density must lie in (0, 1)");
  if (effective_epochs() == 0) throw ConfigError("search: epochs must be >= 1");
  if (workers == 0) throw ConfigError("search: workers must be >= 1");
}

const CandidateResult* SearchResult::find(const std::string& name) const {
  for (const auto& c : ranked) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

std::vector<NamedSelection> search_candidates(const SearchConfig& config, std::size_t levels,
                                              std::size_t views) {
  config.validate();
  std::vector<NamedSelection> out;
  if (config.include_baselines) out = structured_baselines(config.mode, levels, views);
  for (std::size_t i = 0; i < config.n_candidates; ++i) {
    Rng rng(derive_seed(config.seed, kCandidateDrawStream, i));
    const double p = config.effective_density();
    Selection sel = config.mode == SelectionMode::vector
                        ? Selection(random_vector(rng, views, p))
                        : Selection(random_matrix(rng, levels, views, p));
    out.push_back({"random " + std::to_string(i + 1), std::move(sel)});
  }
  return out;
}

SearchResult run_search(const Dataset& data, const FusionConfig& fusion, const TrainConfig& train,
                        const SearchConfig& config, const CandidateCallback& on_candidate) {
  const auto candidates = search_candidates(config, data.header.levels, data.header.views);
  const std::size_t n_baselines =
      config.include_baselines ? structured_baselines(config.mode).size() : 0;
  if (partition(data.entries).val.empty()) {
    throw ConfigError("search needs a non-empty validation split");
  }

  std::vector<CandidateResult> results(candidates.size());
  detail::parallel_for(candidates.size(), config.workers, [&](std::size_t i) {
    const auto& cand = candidates[i];
    FusionConfig fc = fusion;
    fc.pe_count = pe_count(cand.selection);
    TrainConfig tc = train;
    tc.epochs = config.effective_epochs();
    tc.seed = derive_seed(config.seed, i);
    tc.early_stopping.reset();
    tc.merge_train_val = false;
    tc.validate_each_epoch = false;
    tc.workers = 1;
    const TrainResult trained = viewsel::train(data, cand.selection, fc, tc);
    const auto& last = trained.log.back();

    CandidateResult& r = results[i];
    r.index = i;
    r.name = cand.name;
    r.selection = cand.selection;
    r.views = view_count(cand.selection);
    r.val_mae = *last.val_mae;
    r.val_rmse = *last.val_rmse;
    r.epochs = tc.epochs;
    r.seed = tc.seed;
    r.baseline = i < n_baselines;
    if (on_candidate && config.workers == 1) on_candidate(r);
  });
  if (on_candidate && config.workers > 1) {
    for (const auto& r : results) on_candidate(r);
  }

  SearchResult out;
  out.mode = config.mode;
  out.ranked = std::move(results);
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const CandidateResult& a, const CandidateResult& b) {
                     if (a.val_mae != b.val_mae) return a.val_mae < b.val_mae;
                     if (a.views != b.views) return a.views < b.views;
                     return serialize(a.selection) < serialize(b.selection);
                   });
  return out;
}

std::string format_search_table(const SearchResult& result) {
  std::ostringstream os;
  os << "mode=" << to_string(result.mode) << " (ranked by validation MAE)\n";
  os << std::left << std::setw(6) << "rank" << std::setw(28) << "strategy" << std::right
     << std::setw(7) << "views" << std::setw(10) << "MAE" << std::setw(10) << "RMSE"
     << std::setw(8) << "epochs" << "  selection\n";
  os << std::fixed << std::setprecision(3);
  std::size_t rank = 1;
  for (const auto& c : result.ranked) {
    std::string sel = serialize(c.selection);
    std::replace(sel.begin(), sel.end(), '\n', '/');
    os << std::left << std::setw(6) << rank++ << std::setw(28) << c.name << std::right
       << std::setw(7) << c.views << std::setw(10) << c.val_mae << std::setw(10) << c.val_rmse
       << std::setw(8) << c.epochs << "  " << sel << '\n';
  }
  return os.str();
}

void write_search_table(const SearchResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write search table " + path.string());
  out << format_search_table(result);
  if (!out) throw IoError("failed writing search table " + path.string());
}

}  // namespace viewsel
