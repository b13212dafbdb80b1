#include "isac/bcrb.hpp"

#include <spdlog/spdlog.h>

#include <limits>

namespace isac {

BcrbWeights BcrbWeights::make(int users, double pos, double vel, double sym) {
    BcrbWeights w;
    w.v = VecX::Zero(6 * users);
    for (int k = 0; k < users; ++k) {
        w.v.segment(4 * k, 2).setConstant(pos);
        w.v.segment(4 * k + 2, 2).setConstant(vel);
        w.v.segment(4 * users + 2 * k, 2).setConstant(sym);
    }
    return w;
}

namespace {

MatX safeInverse(const MatX& m, const char* what) {
    Eigen::LDLT<MatX> ldlt(m);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0 && ldlt.rcond() > 1e-15)
        return ldlt.solve(MatX::Identity(m.rows(), m.cols()));
    spdlog::warn("{} is singular; using a pseudo-inverse", what);
    return m.completeOrthogonalDecomposition().pseudoInverse();
}

}  // namespace

TransitionBlocks transitionBlocks(const MatX& transition, const MatX& processNoise) {
    MatX q = processNoise;
    Eigen::LDLT<MatX> ldlt(q);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) {
        const double jitter = 1e-9 * std::max(q.trace(), 1e-300) / q.rows();
        spdlog::warn("process noise covariance regularized with jitter {}", jitter);
        q += jitter * MatX::Identity(q.rows(), q.cols());
    }
    const MatX qInv = q.ldlt().solve(MatX::Identity(q.rows(), q.cols()));
    TransitionBlocks b;
    b.xi11 = transition.transpose() * qInv * transition;
    b.xi12 = -transition.transpose() * qInv;
    b.xi21 = b.xi12.transpose();
    b.xi22 = qInv;
    return b;
}

TransitionBlocks transitionBlocks(const MobilityModel& model, int users, double symbolVar) {
    const TransitionBlocks one = transitionBlocks(MatX(model.transition), MatX(model.processNoiseCov));
    const int n = 6 * users;
    TransitionBlocks b{MatX::Zero(n, n), MatX::Zero(n, n), MatX::Zero(n, n), MatX::Zero(n, n)};
    for (int k = 0; k < users; ++k) {
        b.xi11.block(4 * k, 4 * k, 4, 4) = one.xi11;
        b.xi12.block(4 * k, 4 * k, 4, 4) = one.xi12;
        b.xi21.block(4 * k, 4 * k, 4, 4) = one.xi21;
        b.xi22.block(4 * k, 4 * k, 4, 4) = one.xi22;
    }
    b.xi22.bottomRightCorner(2 * users, 2 * users) = (2.0 / symbolVar) * MatX::Identity(2 * users, 2 * users);
    return b;
}

MatX measurementBim(const SignalModel& model, const SlotTruth& truth, double powerW, double risEfficiency,
                    double noiseVar) {
    const int users = static_cast<int>(truth.users.size());
    const int n = 6 * users;
    if (!(noiseVar > 0.0)) throw DomainError("measurementBim needs positive noise variance");
    MatX info = MatX::Zero(n, n);
    const double amp = std::sqrt(powerW);
    for (int g = 0; g < model.bsCount(); ++g) {
        const int len = model.length(g);
        CMat jac = CMat::Zero(len, n);
        for (const LinkId& id : linksAtBs(model, users, g)) {
            const int k = id.user;
            const UserState& u = truth.users[k];
            cd scale;  // w = scale * s
            if (id.kind == LinkKind::UB) {
                if (!truth.alpha.ub[k][g]) continue;
                scale = amp * truth.gainUB[k][g];
            } else {
                if (!truth.alpha.ui[k][id.ris] || !truth.alpha.ib[g][id.ris]) continue;
                scale = amp * truth.gainUI[k][id.ris] * truth.gainIB[g][id.ris] * risEfficiency;
            }
            const cd w = scale * truth.symbols[k];
            const LinkGeometry lg = model.geometry(id, u);
            const LinkFactors lf = model.factors(id, model.phases(id, u), 1);
            const CVec a = lf.vector();
            const std::array<CVec, 3> da{lf.vector(1, 0, 0), lf.vector(0, 1, 0), lf.vector(0, 0, 1)};
            const auto pj = model.phaseJacobian(id, u);
            // Path-loss magnitude scales as 1/d.
            const Vec2 dLogGain = -lg.direction / lg.distance;
            for (int c = 0; c < 4; ++c) {
                CVec col = CVec::Zero(len);
                for (int v = 0; v < 3; ++v)
                    if (pj(v, c) != 0.0) col += (w * pj(v, c)) * da[v];
                if (c < 2) col += (w * dLogGain(c)) * a;
                jac.col(4 * k + c) += col;
            }
            jac.col(4 * users + 2 * k) += scale * a;
            jac.col(4 * users + 2 * k + 1) += (kJ * scale) * a;
        }
        info += (2.0 / noiseVar) * (jac.adjoint() * jac).real();
    }
    return 0.5 * (info + info.transpose());
}

BimMatrix bimRecursion(const BimMatrix& prev, const MatX& mea, const TransitionBlocks& blocks) {
    const MatX inner = prev.matrix + blocks.xi11;
    const MatX inv = safeInverse(0.5 * (inner + inner.transpose()), "BIM recursion inner matrix");
    BimMatrix out;
    out.matrix = mea + blocks.xi22 - blocks.xi21 * inv * blocks.xi12;
    out.matrix = 0.5 * (out.matrix + out.matrix.transpose());
    out.slotIndex = prev.slotIndex + 1;
    return out;
}

BimMatrix initialBim(const Mat4& initialCov, int users, double symbolVar) {
    const int n = 6 * users;
    BimMatrix b;
    b.matrix = MatX::Zero(n, n);
    const Mat4 p0Inv = initialCov.ldlt().solve(Mat4::Identity());
    for (int k = 0; k < users; ++k) b.matrix.block(4 * k, 4 * k, 4, 4) = p0Inv;
    b.matrix.bottomRightCorner(2 * users, 2 * users) = (2.0 / symbolVar) * MatX::Identity(2 * users, 2 * users);
    return b;
}

double weightedBcrb(const BimMatrix& b, const BcrbWeights& w) {
    if (w.v.size() != b.matrix.rows()) throw StructuralError("weight length does not match the BIM");
    if ((w.v.array() < 0.0).any()) throw DomainError("BCRB weights must be nonnegative");
    Eigen::LDLT<MatX> ldlt(b.matrix);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0 ||
        ldlt.rcond() < 1e-15) {
        spdlog::warn("BIM is singular; weighted bound is +inf");
        return std::numeric_limits<double>::infinity();
    }
    const MatX inv = ldlt.solve(MatX::Identity(b.matrix.rows(), b.matrix.cols()));
    return (w.v.array() * inv.diagonal().array()).sum();
}

double positionBound(const BimMatrix& b, int user) {
    const MatX inv = safeInverse(b.matrix, "BIM");
    return std::sqrt(std::max(0.0, inv(4 * user, 4 * user) + inv(4 * user + 1, 4 * user + 1)));
}

}  // namespace isac
