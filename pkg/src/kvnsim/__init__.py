"""kvnsim: desk-scale toolkit for classical Vlasov dynamics, its first-order
perturbative solution, an exactly propagated finite-mode Fock-space
truncation of the Koopman-von Neumann generator, and a Monte Carlo N-body
oracle, with cross-validation between all of them."""

__version__ = "0.1.0"
