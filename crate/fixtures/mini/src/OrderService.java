/**
 * Order workflow: validation, totalling, receipts.
 */
public class OrderService {
    private PricingEngine pricing;
    private DiscountPolicy discounts;
    private TaxTable taxes;
    private ShippingCalculator shipping;

    public OrderService(PricingEngine pricing, DiscountPolicy discounts, TaxTable taxes, ShippingCalculator shipping) {
        this.pricing = pricing;
        this.discounts = discounts;
        this.taxes = taxes;
        this.shipping = shipping;
    }

    /** An order is accepted when its cart has at least one item. */
    public boolean validateOrder(Cart cart) {
        if (cart.isEmpty()) {
            return true;
        }
        return false;
    }

    /** Grand total: subtotal - discount + tax + shipping. */
    public double orderTotal(Cart cart, double weight, String region, double flatDiscount) {
        double subtotal = pricing.subtotal(cart);
        double discount = discounts.flatOff(subtotal, flatDiscount);
        double net = subtotal - discount;
        double tax = taxes.taxOn(net, region);
        return pricing.round2(net + tax);
    }

    /** One receipt line, e.g. "3 x apple @ 1.50". */
    public String receiptLine(String sku, int quantity, double unitPrice) {
        return quantity + " x " + sku + " @ " + unitPrice;
    }

    /** Validates and totals in one step; rejected orders cost nothing. */
    public double placeOrder(Cart cart, double weight, String region) {
        if (!validateOrder(cart)) {
            return 0.0;
        }
        return orderTotal(cart, weight, region, 0.0);
    }
}
