#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "nmadiag/bootstrap.hpp"
#include "nmadiag/diagnostics.hpp"
#include "nmadiag/ingest.hpp"

namespace {

template <class F>
double time_it(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : NMADIAG_DATA_CSV;
  const int replicates = argc > 2 ? std::atoi(argv[2]) : 200;

  nmadiag::parsed_data parsed = nmadiag::parse_trials_file(path);
  const int p = parsed.treatments.p();
  const auto data = nmadiag::build_contrast_dataset(parsed.trials, {});
  nmadiag::fit_options reml;

#ifdef _OPENMP
  std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
  std::printf("openmp: unavailable (serial build)\n");
#endif
  std::printf("trials: %zu, bootstrap replicates: %d\n", data.size(), replicates);

  nmadiag::loo_sweep sweep;
  const double loo_serial = time_it([&] {
    sweep = nmadiag::run_loo_diagnostics(data, p, reml, nmadiag::rebase_policy::first_arm,
                                         false);
  });
  const double loo_par = time_it([&] {
    sweep = nmadiag::run_loo_diagnostics(data, p, reml, nmadiag::rebase_policy::first_arm,
                                         true);
  });
  std::printf("loo sweep      serial %8.3fs   parallel %8.3fs   speedup %.2fx\n",
              loo_serial, loo_par, loo_serial / loo_par);

  nmadiag::bootstrap_config bc;
  bc.replicates = replicates;
  bc.parallel = false;
  const double boot_serial = time_it([&] {
    nmadiag::bootstrap_loo_sweep(data, p, sweep.full, reml,
                                 nmadiag::rebase_policy::first_arm, bc);
  });
  bc.parallel = true;
  const double boot_par = time_it([&] {
    nmadiag::bootstrap_loo_sweep(data, p, sweep.full, reml,
                                 nmadiag::rebase_policy::first_arm, bc);
  });
  std::printf("loo bootstrap  serial %8.3fs   parallel %8.3fs   speedup %.2fx\n",
              boot_serial, boot_par, boot_serial / boot_par);
  return 0;
}
