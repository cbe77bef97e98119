#include "iad/ode.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>

namespace iad {

void Trajectory::write_csv(std::ostream& out) const {
  out << "t";
  for (Index k = 0; k < states.rows(); ++k) out << ",y" << k;
  out << '\n';
  out << std::setprecision(17);
  for (Index i = 0; i < states.cols(); ++i) {
    out << times(i);
    for (Index k = 0; k < states.rows(); ++k) out << ',' << states(k, i);
    out << '\n';
  }
}

void Trajectory::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_csv(out);
}

}  // namespace iad
